#include "shapsens/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shapsens/error.hpp"

namespace shapsens {

namespace {

constexpr int kModelVersion = 1;
constexpr int kMaxDepth = 6;

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

struct SplitCandidate {
  double gain = 0.0;
  int column = -1;
  double threshold = 0.0;
};

double leaf_weight(double g, double h, double l2) { return -g / (h + l2); }

double split_score(double g, double h, double l2) { return g * g / (h + l2); }

}  // namespace

void Hyperparams::validate() const {
  if (rounds < 1) throw ArgumentError("rounds must be at least 1");
  if (max_depth < 1 || max_depth > kMaxDepth) throw ArgumentError("max depth must lie in [1, 6]");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ArgumentError("learning rate must lie in (0, 1]");
  if (!(l2 >= 0.0)) throw ArgumentError("L2 regularization must be non-negative");
  if (!(min_child_weight >= 0.0)) throw ArgumentError("min child weight must be non-negative");
}

nlohmann::json Hyperparams::to_json() const {
  return {{"rounds", rounds},
          {"max_depth", max_depth},
          {"learning_rate", learning_rate},
          {"l2", l2},
          {"min_child_weight", min_child_weight}};
}

Hyperparams Hyperparams::from_json(const nlohmann::json& j) {
  Hyperparams h;
  h.rounds = j.value("rounds", h.rounds);
  h.max_depth = j.value("max_depth", h.max_depth);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.l2 = j.value("l2", h.l2);
  h.min_child_weight = j.value("min_child_weight", h.min_child_weight);
  h.validate();
  return h;
}

double Tree::predict(std::span<const double> row) const {
  std::size_t n = 0;
  while (!nodes[n].is_leaf()) {
    const auto& node = nodes[n];
    n = static_cast<std::size_t>(row[static_cast<std::size_t>(node.column)] < node.threshold ? node.left : node.right);
  }
  return nodes[n].value;
}

int Tree::depth() const {
  if (nodes.empty()) return 0;
  int deepest = 0;
  std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (nodes[id].is_leaf()) continue;
    stack.emplace_back(static_cast<std::size_t>(nodes[id].left), d + 1);
    stack.emplace_back(static_cast<std::size_t>(nodes[id].right), d + 1);
  }
  return deepest;
}

TreeEnsembleModel::TreeEnsembleModel(double base_score, double learning_rate, std::vector<Tree> trees,
                                     std::vector<std::string> column_names)
    : base_(base_score), lr_(learning_rate), trees_(std::move(trees)), columns_(std::move(column_names)) {
  for (const auto& t : trees_) {
    if (t.nodes.empty()) throw ArgumentError("tree without nodes");
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) continue;
      if (static_cast<std::size_t>(n.column) >= columns_.size()) throw ArgumentError("tree node column out of range");
      const auto size = static_cast<int>(t.nodes.size());
      if (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size) {
        throw ArgumentError("tree node child index out of range");
      }
    }
  }
}

void TreeEnsembleModel::check_width(std::size_t n) const {
  if (n != columns_.size()) {
    throw ArgumentError("row width " + std::to_string(n) + " does not match model width " +
                        std::to_string(columns_.size()));
  }
}

double TreeEnsembleModel::margin(std::span<const double> row) const {
  check_width(row.size());
  double sum = 0.0;
  for (const auto& t : trees_) sum += t.predict(row);
  return base_ + lr_ * sum;
}

std::vector<double> TreeEnsembleModel::margins(const Matrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = margin(x.row(r));
  return out;
}

int TreeEnsembleModel::label(std::span<const double> row, double threshold) const {
  return margin(row) > threshold ? 1 : 0;
}

std::vector<int> TreeEnsembleModel::labels(const Matrix& x, double threshold) const {
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = label(x.row(r), threshold);
  return out;
}

TreeEnsembleModel TreeEnsembleModel::concatenate(const TreeEnsembleModel& other) const {
  if (other.width() != width()) throw ArgumentError("cannot concatenate models of different width");
  if (other.lr_ != lr_) throw ArgumentError("cannot concatenate models with different learning rates");
  std::vector<Tree> trees = trees_;
  trees.insert(trees.end(), other.trees_.begin(), other.trees_.end());
  return TreeEnsembleModel(base_ + other.base_, lr_, std::move(trees), columns_);
}

nlohmann::json TreeEnsembleModel::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto& n = t.nodes[i];
      if (n.is_leaf()) {
        nodes.push_back({{"id", i}, {"kind", "leaf"}, {"value", n.value}});
      } else {
        nodes.push_back({{"id", i},
                         {"kind", "split"},
                         {"column", n.column},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"version", kModelVersion}, {"base", base_},   {"lr", lr_},
          {"columns", columns_},      {"trees", trees}, {"training_loss", training_loss_}};
}

TreeEnsembleModel TreeEnsembleModel::from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) throw ParseError("unsupported model version " + std::to_string(version));
    std::vector<Tree> trees;
    for (const auto& jt : j.at("trees")) {
      Tree t;
      t.nodes.resize(jt.size());
      for (const auto& jn : jt) {
        const auto id = jn.at("id").get<std::size_t>();
        if (id >= t.nodes.size()) throw ParseError("model node id out of range");
        TreeNode n;
        if (jn.at("kind").get<std::string>() == "leaf") {
          n.value = jn.at("value").get<double>();
        } else {
          n.column = jn.at("column").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
        }
        t.nodes[id] = n;
      }
      trees.push_back(std::move(t));
    }
    TreeEnsembleModel m(j.at("base").get<double>(), j.at("lr").get<double>(), std::move(trees),
                        j.at("columns").get<std::vector<std::string>>());
    if (j.contains("training_loss")) m.training_loss_ = j.at("training_loss").get<std::vector<double>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

std::string TreeEnsembleModel::serialize() const { return to_json().dump(1) + "\n"; }

void TreeEnsembleModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  out << serialize();
}

TreeEnsembleModel TreeEnsembleModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
}

double log_loss(const std::vector<double>& margins, const std::vector<int>& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    // log(1 + exp(-s m)) computed stably
    const double z = targets[i] ? margins[i] : -margins[i];
    total += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return margins.empty() ? 0.0 : total / static_cast<double>(margins.size());
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size() || predicted.empty()) throw ArgumentError("accuracy needs aligned, nonempty labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == actual[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

TreeEnsembleModel train_gbt(const EncodedMatrix& m, const std::vector<int>& targets, const Hyperparams& h,
                            std::uint64_t seed) {
  return train_gbt(m.values, targets, h, seed, m.column_names);
}

TreeEnsembleModel train_gbt(const Matrix& x, const std::vector<int>& targets, const Hyperparams& h,
                            std::uint64_t /*seed*/, std::vector<std::string> column_names) {
  h.validate();
  const std::size_t n = x.rows();
  const std::size_t width = x.cols();
  if (targets.size() != n) throw ArgumentError("target count does not match row count");
  if (n < 2) throw TrainingError("training needs at least 2 rows");
  if (column_names.empty()) {
    for (std::size_t c = 0; c < width; ++c) column_names.push_back("x" + std::to_string(c));
  }
  if (column_names.size() != width) throw ArgumentError("column name count does not match matrix width");

  const auto positives = static_cast<std::size_t>(std::count(targets.begin(), targets.end(), 1));
  if (positives == 0 || positives == n) throw TrainingError("training targets contain a single class");
  const double rate = static_cast<double>(positives) / static_cast<double>(n);
  const double base = std::log(rate / (1.0 - rate));

  // Presorted row order per column, ties by row index.
  std::vector<std::vector<std::size_t>> order(width, std::vector<std::size_t>(n));
  for (std::size_t c = 0; c < width; ++c) {
    auto& o = order[c];
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return x(a, c) < x(b, c); });
  }

  std::vector<double> margin(n, base);
  std::vector<double> grad(n), hess(n);
  std::vector<int> node_of(n);
  std::vector<Tree> trees;
  std::vector<double> losses;

  struct NodeStats {
    double g = 0.0, h = 0.0;
  };
  struct ScanState {
    double gl = 0.0, hl = 0.0, last = 0.0;
    bool seen = false;
  };

  for (int round = 0; round < h.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      grad[i] = p - targets[i];
      hess[i] = p * (1.0 - p);
    }
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<NodeStats> stats(1);
    for (std::size_t i = 0; i < n; ++i) {
      stats[0].g += grad[i];
      stats[0].h += hess[i];
    }
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> frontier{0};

    for (int depth = 0; depth < h.max_depth && !frontier.empty(); ++depth) {
      // Slot of each node in the frontier, -1 otherwise.
      std::vector<int> slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);
      std::vector<SplitCandidate> best(frontier.size());

      for (std::size_t c = 0; c < width; ++c) {
        std::vector<ScanState> scan(frontier.size());
        for (std::size_t i : order[c]) {
          const int s = slot[static_cast<std::size_t>(node_of[i])];
          if (s < 0) continue;
          auto& st = scan[static_cast<std::size_t>(s)];
          const double v = x(i, c);
          if (st.seen && v > st.last) {
            const auto& total = stats[static_cast<std::size_t>(frontier[static_cast<std::size_t>(s)])];
            const double hr = total.h - st.hl;
            if (st.hl >= h.min_child_weight && hr >= h.min_child_weight) {
              const double gain = 0.5 * (split_score(st.gl, st.hl, h.l2) + split_score(total.g - st.gl, hr, h.l2) -
                                         split_score(total.g, total.h, h.l2));
              auto& b = best[static_cast<std::size_t>(s)];
              // A zero-gain split is still taken so symmetric targets (XOR) can start.
              if (b.column < 0 ? gain >= 0.0 : gain > b.gain) {
                double t = st.last + 0.5 * (v - st.last);
                if (!(st.last < t && t <= v)) t = v;
                b = {gain, static_cast<int>(c), t};
              }
            }
          }
          st.gl += grad[i];
          st.hl += hess[i];
          st.last = v;
          st.seen = true;
        }
      }

      std::vector<int> next;
      std::vector<int> split_slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < frontier.size(); ++s) {
        if (best[s].column < 0) continue;
        const auto id = static_cast<std::size_t>(frontier[s]);
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stats.resize(tree.nodes.size());
        tree.nodes[id].column = best[s].column;
        tree.nodes[id].threshold = best[s].threshold;
        tree.nodes[id].left = left;
        tree.nodes[id].right = left + 1;
        split_slot.resize(tree.nodes.size(), -1);
        split_slot[id] = 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto id = static_cast<std::size_t>(node_of[i]);
        if (id >= split_slot.size() || split_slot[id] < 0) continue;
        const auto& node = tree.nodes[id];
        node_of[i] = x(i, static_cast<std::size_t>(node.column)) < node.threshold ? node.left : node.right;
        auto& st = stats[static_cast<std::size_t>(node_of[i])];
        st.g += grad[i];
        st.h += hess[i];
      }
      frontier = std::move(next);
    }

    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (tree.nodes[id].is_leaf()) tree.nodes[id].value = leaf_weight(stats[id].g, stats[id].h, h.l2);
    }
    for (std::size_t i = 0; i < n; ++i) {
      margin[i] += h.learning_rate * tree.nodes[static_cast<std::size_t>(node_of[i])].value;
    }
    losses.push_back(log_loss(margin, targets));
    trees.push_back(std::move(tree));
  }

  TreeEnsembleModel model(base, h.learning_rate, std::move(trees), std::move(column_names));
  model.set_training_loss(std::move(losses));
  return model;
}

}  // namespace shapsens
