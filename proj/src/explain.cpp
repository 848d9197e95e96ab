#include "shapsens/explain.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "shapsens/error.hpp"
#include "shapsens/random.hpp"

namespace shapsens {

namespace {

std::atomic<std::uint64_t> g_efficiency_checks{0};

void verify_efficiency(const Explanation& e, double margin) {
  const double gap = std::abs(e.total() - margin);
  if (!(gap <= kEfficiencyTolerance)) {
    throw std::logic_error("explanation of observation " + std::to_string(e.observation) +
                           " violates efficiency by " + std::to_string(gap));
  }
  ++g_efficiency_checks;
}

// Columns owned by each player.
std::vector<std::vector<std::size_t>> player_columns(std::size_t width, Players players) {
  std::vector<std::vector<std::size_t>> out;
  if (players == nullptr) {
    out.resize(width);
    for (std::size_t c = 0; c < width; ++c) out[c] = {c};
    return out;
  }
  if (players->columns() != width) throw ArgumentError("player map does not match model width");
  out.resize(players->groups());
  for (std::size_t c = 0; c < width; ++c) out[players->column_group[c]].push_back(c);
  return out;
}

std::vector<std::size_t> column_player(std::size_t width, Players players) {
  std::vector<std::size_t> out(width);
  for (std::size_t c = 0; c < width; ++c) out[c] = players == nullptr ? c : players->column_group[c];
  return out;
}

void check_inputs(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg) {
  if (x.size() != model.width()) throw ArgumentError("observation width does not match model width");
  if (bg.size() == 0) throw ArgumentError("background is empty");
  if (bg.rows.cols() != model.width()) throw ArgumentError("background width does not match model width");
}

double mean_margin(const TreeEnsembleModel& model, const Matrix& rows) {
  double sum = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r) sum += model.margin(rows.row(r));
  return sum / static_cast<double>(rows.rows());
}

}  // namespace

std::uint64_t efficiency_checks() { return g_efficiency_checks.load(); }

std::vector<std::size_t> background_indices(std::size_t pool_size, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), 0);
  if (pool_size <= size) return idx;
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Background make_background(const Matrix& pool, std::size_t size, std::uint64_t seed, std::string source) {
  if (pool.rows() == 0 || size == 0) throw ArgumentError("background needs at least one row");
  auto idx = background_indices(pool.rows(), size, seed);
  return Background{pool.select_rows(idx), std::move(source), seed};
}

std::string ExplainMethod::tag() const {
  switch (kind) {
    case MethodKind::kExact: return "exact";
    case MethodKind::kTree: return "tree";
    case MethodKind::kSampled:
      if (all_orderings) return "sampled(all)";
      return "sampled(" + std::to_string(permutations) + ";seed=" + std::to_string(seed) + ")";
  }
  return "tree";
}

double Explanation::total() const { return std::accumulate(weights.begin(), weights.end(), base); }

double GroupedExplanation::total() const { return std::accumulate(weights.begin(), weights.end(), base); }

double GroupedExplanation::weight(const std::string& feature) const { return weights.at(groups->index_of(feature)); }

double value_function(const TreeEnsembleModel& model, std::span<const double> x, const std::vector<bool>& coalition,
                      const Background& bg) {
  check_inputs(model, x, bg);
  if (coalition.size() != x.size()) throw ArgumentError("coalition mask does not match model width");
  std::vector<double> z(x.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < bg.size(); ++r) {
    auto b = bg.rows.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) z[c] = coalition[c] ? x[c] : b[c];
    sum += model.margin(z);
  }
  return sum / static_cast<double>(bg.size());
}

// ---------------------------------------------------------------- exact

Explanation exact_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                          std::size_t width_limit, Players players, std::size_t observation) {
  check_inputs(model, x, bg);
  const auto owned = player_columns(model.width(), players);
  const std::size_t n = owned.size();
  if (n > width_limit || n >= 31) {
    throw CapabilityError("exact enumeration over " + std::to_string(n) + " players exceeds the limit of " +
                          std::to_string(width_limit) + "; use sampled_shapley or tree_shapley");
  }

  // v(S) for every coalition mask.
  const std::size_t subsets = std::size_t{1} << n;
  std::vector<double> value(subsets);
  std::vector<bool> mask(model.width());
  for (std::size_t s = 0; s < subsets; ++s) {
    std::fill(mask.begin(), mask.end(), false);
    for (std::size_t p = 0; p < n; ++p) {
      if (s >> p & 1) {
        for (std::size_t c : owned[p]) mask[c] = true;
      }
    }
    value[s] = value_function(model, x, mask, bg);
  }

  // weight[k] = k! (n-k-1)! / n!
  std::vector<double> fact(n + 1, 1.0);
  for (std::size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> weight(n);
  for (std::size_t k = 0; k < n; ++k) weight[k] = fact[k] * fact[n - k - 1] / fact[n];

  Explanation e;
  e.base = value[0];
  e.weights.assign(n, 0.0);
  e.observation = observation;
  e.method.kind = MethodKind::kExact;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t bit = std::size_t{1} << p;
    double phi = 0.0;
    for (std::size_t s = 0; s < subsets; ++s) {
      if (s & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
    e.weights[p] = phi;
  }
  verify_efficiency(e, model.margin(x));
  return e;
}

// ---------------------------------------------------------------- sampled

Explanation sampled_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                            const SamplingOptions& options, Players players, std::size_t observation) {
  check_inputs(model, x, bg);
  const auto owned = player_columns(model.width(), players);
  const std::size_t n = owned.size();
  if (!options.all_orderings && options.permutations < 1) throw ArgumentError("permutation count must be at least 1");
  if (options.all_orderings && n > 10) throw CapabilityError("enumerating all orderings is limited to 10 players");

  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  const double empty_value = mean_margin(model, bg.rows);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  Matrix z = bg.rows;

  std::size_t count = 0;
  bool more = true;
  while (more) {
    if (!options.all_orderings) std::shuffle(order.begin(), order.end(), rng);
    z = bg.rows;
    double prev = empty_value;
    for (std::size_t p : order) {
      for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c : owned[p]) z(r, c) = x[c];
      }
      const double next = mean_margin(model, z);
      const double delta = next - prev;
      sum[p] += delta;
      sum_sq[p] += delta * delta;
      prev = next;
    }
    ++count;
    more = options.all_orderings ? std::next_permutation(order.begin(), order.end())
                                 : count < options.permutations;
  }

  Explanation e;
  e.base = empty_value;
  e.observation = observation;
  e.method = {MethodKind::kSampled, count, options.seed, options.all_orderings};
  e.weights.resize(n);
  e.std_errors.resize(n);
  const double m = static_cast<double>(count);
  for (std::size_t p = 0; p < n; ++p) {
    e.weights[p] = sum[p] / m;
    const double var = count > 1 ? std::max(0.0, (sum_sq[p] - m * e.weights[p] * e.weights[p]) / (m - 1.0)) : 0.0;
    e.std_errors[p] = std::sqrt(var / m);
  }
  verify_efficiency(e, model.margin(x));
  return e;
}

// ---------------------------------------------------------------- tree

namespace {

// For a fixed reference row b, the contribution of one leaf with value w to
// the composite-row game is w * g(S), where g(S) = 1 iff every player whose
// path conditions only x satisfies is in S (set A) and every player whose
// conditions only b satisfies is outside S (set B). Its Shapley values are
//   +w (|A|-1)! |B|! / (|A|+|B|)!  for players in A,
//   -w |A|! (|B|-1)! / (|A|+|B|)!  for players in B.
class LeafGameCoefficients {
 public:
  explicit LeafGameCoefficients(std::size_t max_players) : n_(max_players + 1), a_(n_ * n_), b_(n_ * n_) {
    std::vector<double> fact(2 * n_ + 1, 1.0);
    for (std::size_t i = 1; i < fact.size(); ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
    for (std::size_t na = 0; na < n_; ++na) {
      for (std::size_t nb = 0; nb < n_; ++nb) {
        if (na + nb == 0) continue;
        if (na > 0) a_[na * n_ + nb] = fact[na - 1] * fact[nb] / fact[na + nb];
        if (nb > 0) b_[na * n_ + nb] = fact[na] * fact[nb - 1] / fact[na + nb];
      }
    }
  }
  double in_a(std::size_t na, std::size_t nb) const { return a_[na * n_ + nb]; }
  double in_b(std::size_t na, std::size_t nb) const { return b_[na * n_ + nb]; }

 private:
  std::size_t n_;
  std::vector<double> a_, b_;
};

struct PathEntry {
  std::size_t player;
  bool x_ok;
  bool b_ok;
};

// Tree with internal nodes numbered compactly so a row's branch decisions
// fit in one 64-bit pattern (bit set = goes left).
struct IndexedTree {
  const Tree* tree;
  std::vector<int> internal_index;  // per node, -1 for leaves
  std::vector<std::size_t> internal_nodes;

  explicit IndexedTree(const Tree& t) : tree(&t), internal_index(t.nodes.size(), -1) {
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      if (t.nodes[i].is_leaf()) continue;
      internal_index[i] = static_cast<int>(internal_nodes.size());
      internal_nodes.push_back(i);
    }
    if (internal_nodes.size() > 64) throw CapabilityError("tree has more than 64 internal nodes");
  }

  std::uint64_t pattern(std::span<const double> row) const {
    std::uint64_t bits = 0;
    for (std::size_t j = 0; j < internal_nodes.size(); ++j) {
      const auto& node = tree->nodes[internal_nodes[j]];
      if (row[static_cast<std::size_t>(node.column)] < node.threshold) bits |= std::uint64_t{1} << j;
    }
    return bits;
  }
};

class LeafGameWalker {
 public:
  LeafGameWalker(const IndexedTree& tree, const std::vector<std::size_t>& column_player,
                 const LeafGameCoefficients& coef)
      : tree_(tree), column_player_(column_player), coef_(coef) {}

  // Adds scale * phi(x-pattern, b-pattern) into out.
  void walk(std::uint64_t px, std::uint64_t pb, double scale, std::vector<double>& out) {
    path_.clear();
    visit(0, px, pb, scale, out);
  }

 private:
  void visit(std::size_t id, std::uint64_t px, std::uint64_t pb, double scale, std::vector<double>& out) {
    const auto& node = tree_.tree->nodes[id];
    if (node.is_leaf()) {
      std::size_t na = 0, nb = 0;
      for (const auto& e : path_) {
        if (e.x_ok && !e.b_ok) ++na;
        if (e.b_ok && !e.x_ok) ++nb;
      }
      if (na + nb == 0 || node.value == 0.0) return;
      const double wa = scale * node.value * coef_.in_a(na, nb);
      const double wb = scale * node.value * coef_.in_b(na, nb);
      for (const auto& e : path_) {
        if (e.x_ok && !e.b_ok) out[e.player] += wa;
        if (e.b_ok && !e.x_ok) out[e.player] -= wb;
      }
      return;
    }
    const auto j = static_cast<unsigned>(tree_.internal_index[id]);
    const bool x_left = px >> j & 1;
    const bool b_left = pb >> j & 1;
    const std::size_t player = column_player_[static_cast<std::size_t>(node.column)];

    auto existing = std::find_if(path_.begin(), path_.end(), [&](const PathEntry& e) { return e.player == player; });
    const bool fresh = existing == path_.end();
    const PathEntry saved = fresh ? PathEntry{player, true, true} : *existing;
    const std::size_t pos = fresh ? path_.size() : static_cast<std::size_t>(existing - path_.begin());
    if (fresh) path_.push_back(saved);

    for (int side = 0; side < 2; ++side) {
      const bool left = side == 0;
      const bool x_ok = saved.x_ok && x_left == left;
      const bool b_ok = saved.b_ok && b_left == left;
      if (!x_ok && !b_ok) continue;
      path_[pos].x_ok = x_ok;
      path_[pos].b_ok = b_ok;
      visit(static_cast<std::size_t>(left ? node.left : node.right), px, pb, scale, out);
    }
    if (fresh) {
      path_.pop_back();
    } else {
      path_[pos] = saved;
    }
  }

  const IndexedTree& tree_;
  const std::vector<std::size_t>& column_player_;
  const LeafGameCoefficients& coef_;
  std::vector<PathEntry> path_;
};

}  // namespace

Explanation tree_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                         Players players, std::size_t observation) {
  Matrix xs(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return tree_shapley_batch(model, xs, bg, players, {observation}).front();
}

std::vector<Explanation> tree_shapley_batch(const TreeEnsembleModel& model, const Matrix& xs, const Background& bg,
                                            Players players, const std::vector<std::size_t>& observations) {
  if (xs.cols() != model.width()) throw ArgumentError("observation width does not match model width");
  if (bg.size() == 0) throw ArgumentError("background is empty");
  if (bg.rows.cols() != model.width()) throw ArgumentError("background width does not match model width");
  if (!observations.empty() && observations.size() != xs.rows()) {
    throw ArgumentError("observation index count does not match row count");
  }
  const auto col_player = column_player(model.width(), players);
  const std::size_t n_players = player_columns(model.width(), players).size();
  const double base = mean_margin(model, bg.rows);

  int max_depth = 0;
  for (const auto& t : model.trees()) max_depth = std::max(max_depth, t.depth());
  const LeafGameCoefficients coef(static_cast<std::size_t>(max_depth));

  std::vector<std::vector<double>> weights(xs.rows(), std::vector<double>(n_players, 0.0));
  const double bg_share = model.learning_rate() / static_cast<double>(bg.size());
  std::vector<double> scratch(n_players);

  for (const auto& tree : model.trees()) {
    const IndexedTree indexed(tree);
    if (indexed.internal_nodes.empty()) continue;

    // Distinct background branch patterns with multiplicities, in order of
    // first appearance.
    std::vector<std::pair<std::uint64_t, std::size_t>> bg_patterns;
    {
      std::unordered_map<std::uint64_t, std::size_t> slot;
      for (std::size_t r = 0; r < bg.size(); ++r) {
        const auto p = indexed.pattern(bg.rows.row(r));
        auto [it, inserted] = slot.emplace(p, bg_patterns.size());
        if (inserted) bg_patterns.emplace_back(p, 0);
        ++bg_patterns[it->second].second;
      }
    }

    LeafGameWalker walker(indexed, col_player, coef);
    std::unordered_map<std::uint64_t, std::vector<double>> cache;
    for (std::size_t r = 0; r < xs.rows(); ++r) {
      const auto px = indexed.pattern(xs.row(r));
      auto it = cache.find(px);
      if (it == cache.end()) {
        std::fill(scratch.begin(), scratch.end(), 0.0);
        for (const auto& [pb, count] : bg_patterns) {
          if (pb == px) continue;
          walker.walk(px, pb, bg_share * static_cast<double>(count), scratch);
        }
        it = cache.emplace(px, scratch).first;
      }
      auto& w = weights[r];
      for (std::size_t p = 0; p < n_players; ++p) w[p] += it->second[p];
    }
  }

  std::vector<Explanation> out(xs.rows());
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    auto& e = out[r];
    e.base = base;
    e.weights = std::move(weights[r]);
    e.observation = observations.empty() ? r : observations[r];
    e.method.kind = MethodKind::kTree;
    verify_efficiency(e, model.margin(xs.row(r)));
  }
  return out;
}

// ---------------------------------------------------------------- groups

GroupedExplanation aggregate_groups(const Explanation& e, std::shared_ptr<const GroupMap> groups) {
  if (!groups) throw ArgumentError("group map is null");
  if (groups->columns() != e.weights.size()) {
    throw ArgumentError("group map covers " + std::to_string(groups->columns()) + " columns, explanation has " +
                        std::to_string(e.weights.size()));
  }
  GroupedExplanation g;
  g.base = e.base;
  g.observation = e.observation;
  g.weights.assign(groups->groups(), 0.0);
  for (std::size_t c = 0; c < e.weights.size(); ++c) {
    const std::size_t group = groups->column_group[c];
    if (group >= groups->groups()) throw ArgumentError("column " + std::to_string(c) + " maps to no logical feature");
    g.weights[group] += e.weights[c];
  }
  g.groups = std::move(groups);
  return g;
}

std::vector<GroupedExplanation> aggregate_groups(const std::vector<Explanation>& es, const GroupMap& groups) {
  auto shared = std::make_shared<const GroupMap>(groups);
  std::vector<GroupedExplanation> out;
  out.reserve(es.size());
  for (const auto& e : es) out.push_back(aggregate_groups(e, shared));
  return out;
}

int reconstruct_label(const Explanation& e) { return e.total() > 0.0 ? 1 : 0; }
int reconstruct_label(const GroupedExplanation& e) { return e.total() > 0.0 ? 1 : 0; }

}  // namespace shapsens
