#include "shapsens/harness.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "shapsens/error.hpp"
#include "shapsens/metrics.hpp"
#include "shapsens/parallel.hpp"
#include "shapsens/random.hpp"

namespace shapsens {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kSensitivity: return "sensitivity";
    case Protocol::kAttackBucket: return "attack-bucket";
    case Protocol::kAttackMerge: return "attack-merge";
    case Protocol::kExplain: return "explain";
    case Protocol::kTrain: return "train";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& text) {
  for (Protocol p : {Protocol::kSensitivity, Protocol::kAttackBucket, Protocol::kAttackMerge, Protocol::kExplain,
                     Protocol::kTrain}) {
    if (to_string(p) == text) return p;
  }
  throw ArgumentError("unknown protocol '" + text + "'");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) throw ArgumentError("run name must be a plain directory name");
  if (!data.synthetic() && data.schema.empty()) throw ArgumentError("a CSV data source needs a schema file");
  if (bucket_min < 1 || bucket_max < bucket_min) throw ArgumentError("bucket count range is empty");
  if (folds < 2) throw ArgumentError("at least 2 folds are required");
  for (const auto& s : strategies) {
    if (s != "equi-width" && s != "equi-depth") throw ArgumentError("unknown bucket strategy '" + s + "'");
  }
  if (explainer.method != "tree" && explainer.method != "exact" && explainer.method != "sampled") {
    throw ArgumentError("unknown explainer method '" + explainer.method + "'");
  }
  if (explainer.background == 0) throw ArgumentError("background size must be positive");
  if (grid.tune && (grid.depths.empty() || grid.rounds.empty())) throw ArgumentError("hyperparameter grid is empty");
  if (!(grid.validation_fraction > 0.0 && grid.validation_fraction < 1.0)) {
    throw ArgumentError("validation fraction must lie in (0, 1)");
  }
  grid.fixed.validate();
  attack.validate();
  if (protocol == Protocol::kExplain && model.empty()) throw ArgumentError("explain needs a model file");
}

std::vector<std::size_t> ExperimentConfig::bucket_counts() const {
  std::vector<std::size_t> out;
  for (std::size_t k = bucket_min; k <= bucket_max; ++k) out.push_back(k);
  return out;
}

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["output_dir"] = output_dir.string();
  j["protocol"] = to_string(protocol);
  json src;
  if (data.synthetic()) {
    src = {{"synthetic", {{"rows", data.synth.rows}, {"seed", data.synth_seed}}}};
  } else {
    src = {{"csv", data.csv.string()}, {"schema", data.schema.string()}};
  }
  j["data"] = src;
  j["protected"] = protected_feature;
  j["strategies"] = strategies;
  j["buckets"] = {{"min", bucket_min}, {"max", bucket_max}};
  j["representative"] = to_string(representative);
  j["ovr_feature"] = ovr_feature;
  j["folds"] = folds;
  j["seed"] = seed;
  j["explainer"] = {{"method", explainer.method},
                    {"background", explainer.background},
                    {"permutations", explainer.permutations}};
  j["grid"] = {{"depths", grid.depths},
               {"rounds", grid.rounds},
               {"learning_rate", grid.learning_rate},
               {"validation_fraction", grid.validation_fraction},
               {"tune", grid.tune},
               {"fixed", grid.fixed.to_json()}};
  j["attack"] = attack.to_json();
  j["merge_candidates"] = merge_candidates;
  j["transform"] = transform.string();
  j["model"] = model.string();
  j["threads"] = threads;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.protocol = protocol_from_string(j.value("protocol", to_string(c.protocol)));
    if (j.contains("data")) {
      const auto& src = j.at("data");
      if (src.contains("csv")) {
        c.data.csv = src.at("csv").get<std::string>();
        c.data.schema = src.value("schema", std::string());
      } else if (src.contains("synthetic")) {
        const auto& s = src.at("synthetic");
        c.data.synth.rows = s.value("rows", c.data.synth.rows);
        c.data.synth_seed = s.value("seed", c.data.synth_seed);
      }
    }
    c.protected_feature = j.value("protected", c.protected_feature);
    c.strategies = j.value("strategies", c.strategies);
    if (j.contains("buckets")) {
      c.bucket_min = j.at("buckets").value("min", c.bucket_min);
      c.bucket_max = j.at("buckets").value("max", c.bucket_max);
    }
    c.representative = representative_from_string(j.value("representative", to_string(c.representative)));
    c.ovr_feature = j.value("ovr_feature", c.ovr_feature);
    c.folds = j.value("folds", c.folds);
    c.seed = j.value("seed", c.seed);
    if (j.contains("explainer")) {
      const auto& e = j.at("explainer");
      c.explainer.method = e.value("method", c.explainer.method);
      c.explainer.background = e.value("background", c.explainer.background);
      c.explainer.permutations = e.value("permutations", c.explainer.permutations);
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      c.grid.depths = g.value("depths", c.grid.depths);
      c.grid.rounds = g.value("rounds", c.grid.rounds);
      c.grid.learning_rate = g.value("learning_rate", c.grid.learning_rate);
      c.grid.validation_fraction = g.value("validation_fraction", c.grid.validation_fraction);
      c.grid.tune = g.value("tune", c.grid.tune);
      if (g.contains("fixed")) c.grid.fixed = Hyperparams::from_json(g.at("fixed"));
    }
    if (j.contains("attack")) c.attack = AttackConfig::from_json(j.at("attack"));
    c.merge_candidates = j.value("merge_candidates", c.merge_candidates);
    c.transform = j.value("transform", std::string());
    c.model = j.value("model", std::string());
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunManifest::to_json() const {
  json j{{"config", config}, {"version", version}, {"status", status}, {"artifacts", artifacts}, {"timings", timings}};
  if (!error.is_null()) j["error"] = error;
  return j;
}

void RunManifest::save(const fs::path& run_dir) const {
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + run_dir.string());
  out << to_json().dump(2) << "\n";
}

Dataset load_dataset(const DataSource& source) {
  if (source.synthetic()) return synth_generate(source.synth, source.synth_seed);
  return load_csv(source.csv, Schema::load(source.schema));
}

namespace {

std::vector<int> targets_of(const Dataset& d, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(d.targets()[r]);
  return y;
}

TreeEnsembleModel fit(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& rows,
                      const Hyperparams& h, std::uint64_t seed) {
  return train_gbt(apply_pipeline(d, spec, rows), targets_of(d, rows), h, seed);
}

// CSV text with quoting for fields that need it.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      const auto& f = fields[i];
      if (f.find_first_of(",\"\n") == std::string::npos) {
        out_ << f;
      } else {
        out_ << '"';
        for (char c : f) out_ << (c == '"' ? "\"\"" : std::string(1, c));
        out_ << '"';
      }
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

std::string num(double v) { return format_number(v); }
std::string num(std::size_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

// Tracks artifacts written under a run directory.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void text(const std::string& rel, const std::string& content) {
    const fs::path p = dir_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    if (!out) throw IoError("failed writing " + p.string());
    artifacts_.push_back(rel);
  }
  void csv(const std::string& rel, const Csv& c) { text(rel, c.str()); }
  void json_file(const std::string& rel, const json& j) { text(rel, j.dump(2) + "\n"); }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

 private:
  fs::path dir_;
  std::vector<std::string> artifacts_;
};

struct Stats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

// Mean and sample standard deviation, ignoring NaN entries.
Stats stats(const std::vector<double>& xs) {
  std::vector<double> v;
  for (double x : xs) {
    if (!std::isnan(x)) v.push_back(x);
  }
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// An unset feature falls back to the schema's protected feature, or for
// merge attacks on a non-categorical one, the first categorical feature.
std::string resolve_protected(const ExperimentConfig& cfg, const Schema& schema) {
  std::string f = cfg.protected_feature.empty() ? schema.protected_feature() : cfg.protected_feature;
  if (cfg.protected_feature.empty() && cfg.protocol == Protocol::kAttackMerge && schema.contains(f) &&
      schema.feature(f).kind != FeatureKind::kCategorical) {
    for (const auto& fd : schema.features()) {
      if (fd.kind == FeatureKind::kCategorical) {
        f = fd.name;
        break;
      }
    }
  }
  if (!schema.contains(f)) throw SchemaError("protected feature '" + f + "' is not in the schema");
  return f;
}

Background background_for(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& pool,
                          std::size_t size, std::uint64_t seed, const std::string& source) {
  std::vector<std::size_t> rows;
  for (std::size_t i : background_indices(pool.size(), size, seed)) rows.push_back(pool[i]);
  return Background{apply_pipeline(d, spec, rows).values, source, seed};
}

}  // namespace

GridResult select_hyperparams(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& train_rows,
                              const ModelGrid& grid, std::uint64_t seed) {
  GridResult result;
  if (!grid.tune) {
    result.best = grid.fixed;
    return result;
  }
  std::vector<std::size_t> rows = train_rows;
  Rng rng = make_rng(seed, "holdout");
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto holdout = static_cast<std::size_t>(std::floor(grid.validation_fraction * static_cast<double>(rows.size())));
  if (holdout == 0 || holdout == rows.size()) throw ArgumentError("too few rows for a validation holdout");
  std::vector<std::size_t> fit_rows(rows.begin(), rows.end() - static_cast<long>(holdout));
  std::vector<std::size_t> val_rows(rows.end() - static_cast<long>(holdout), rows.end());
  std::sort(fit_rows.begin(), fit_rows.end());
  std::sort(val_rows.begin(), val_rows.end());

  const auto fit_x = apply_pipeline(d, spec, fit_rows);
  const auto fit_y = targets_of(d, fit_rows);
  const auto val_x = apply_pipeline(d, spec, val_rows);
  const auto val_y = targets_of(d, val_rows);

  result.accuracy = -1.0;
  for (int depth : grid.depths) {
    for (int rounds : grid.rounds) {
      Hyperparams h = grid.fixed;
      h.max_depth = depth;
      h.rounds = rounds;
      h.learning_rate = grid.learning_rate;
      const auto model = train_gbt(fit_x, fit_y, h, derive_seed(seed, "model"));
      const double acc = accuracy(model.labels(val_x.values), val_y);
      result.scores.emplace_back(h, acc);
      if (acc > result.accuracy) {
        result.accuracy = acc;
        result.best = h;
      }
    }
  }
  return result;
}

ExplainMethod explain_method(const ExplainerSettings& s, std::uint64_t seed) {
  ExplainMethod m;
  if (s.method == "tree") {
    m.kind = MethodKind::kTree;
  } else if (s.method == "exact") {
    m.kind = MethodKind::kExact;
  } else if (s.method == "sampled") {
    m.kind = MethodKind::kSampled;
    m.permutations = s.permutations;
    m.seed = seed;
  } else {
    throw ArgumentError("unknown explainer method '" + s.method + "'");
  }
  return m;
}

std::vector<Explanation> explain_rows(const TreeEnsembleModel& model, const Matrix& xs, const Background& bg,
                                      const ExplainMethod& method, const std::vector<std::size_t>& observations,
                                      std::size_t threads) {
  if (method.kind == MethodKind::kTree) return tree_shapley_batch(model, xs, bg, nullptr, observations);
  std::vector<Explanation> out(xs.rows());
  parallel_for(
      xs.rows(),
      [&](std::size_t i) {
        const std::size_t obs = observations.empty() ? i : observations[i];
        if (method.kind == MethodKind::kExact) {
          out[i] = exact_shapley(model, xs.row(i), bg, 16, nullptr, obs);
        } else {
          SamplingOptions opt{method.permutations, derive_seed(method.seed, "obs-" + std::to_string(obs)),
                              method.all_orderings};
          out[i] = sampled_shapley(model, xs.row(i), bg, opt, nullptr, obs);
        }
      },
      threads);
  return out;
}

namespace {

struct SeriesKey {
  std::string feature;
  std::string strategy;
  std::size_t buckets = 0;
};

struct FoldSensitivity {
  std::vector<std::vector<std::string>> metric_rows;  // feature,strategy,buckets,fold,metric,value
  std::vector<std::vector<std::string>> shift_rows;
  std::vector<std::vector<std::string>> bucket_rows;
  std::vector<std::vector<std::string>> subgroup_rows;
  std::string base_explanations;
  std::string base_grouped;
  std::string base_model;
  double seconds = 0.0;
};

std::vector<std::string> key_fields(const SeriesKey& k, std::size_t fold) {
  return {k.feature, k.strategy, num(k.buckets), num(fold)};
}

std::string explanations_csv(const std::vector<GroupedExplanation>& es, const std::string& method) {
  std::vector<std::string> header{"observation", "method", "base"};
  if (!es.empty()) {
    for (const auto& g : es.front().groups->group_names) header.push_back(g);
  }
  header.push_back("label");
  Csv c(header);
  for (const auto& e : es) {
    std::vector<std::string> row{num(e.observation), method, num(e.base)};
    for (double w : e.weights) row.push_back(num(w));
    row.push_back(num(reconstruct_label(e)));
    c.row(row);
  }
  return c.str();
}

// Column-level variant: one weight per encoded column.
std::string explanations_csv(const std::vector<Explanation>& es, const std::vector<std::string>& columns) {
  std::vector<std::string> header{"observation", "method", "base"};
  header.insert(header.end(), columns.begin(), columns.end());
  header.push_back("label");
  Csv c(header);
  for (const auto& e : es) {
    std::vector<std::string> row{num(e.observation), e.method.tag(), num(e.base)};
    for (double w : e.weights) row.push_back(num(w));
    row.push_back(num(reconstruct_label(e)));
    c.row(row);
  }
  return c.str();
}

// Metrics of one representation of one fold, plus comparisons to Base.
void record_series(FoldSensitivity& out, const SeriesKey& key, std::size_t fold,
                   const std::vector<GroupedExplanation>& grouped, const RankTable& ranks, const RankTable& base_ranks,
                   const std::vector<int>& reference, const std::vector<int>& predicted,
                   const std::vector<int>& actual, std::size_t clamped, const std::vector<std::size_t>* bucket_of,
                   std::size_t bucket_count) {
  auto metric = [&](const std::string& name, double v) {
    auto row = key_fields(key, fold);
    row.push_back(name);
    row.push_back(num(v));
    out.metric_rows.push_back(std::move(row));
  };
  const auto top = avg_abs_shap_top(grouped, key.feature);
  metric("avg_abs_shap", avg_abs_shap(grouped, key.feature));
  metric("avg_abs_shap_top1", top ? *top : std::numeric_limits<double>::quiet_NaN());
  metric("avg_rank", avg_rank(ranks, key.feature));
  metric("top1_frequency", top1_frequency(ranks, key.feature));
  metric("fidelity", fidelity(grouped, reference).lambda);
  metric("accuracy", accuracy(predicted, actual));
  metric("clamped", static_cast<double>(clamped));

  for (const auto& [shift, count] : rank_shift_histogram(base_ranks, ranks, key.feature)) {
    auto row = key_fields(key, fold);
    row.push_back(num(shift));
    row.push_back(num(count));
    out.shift_rows.push_back(std::move(row));
  }

  if (bucket_of != nullptr) {
    const auto counts = per_bucket_shift_counts(base_ranks, ranks, key.feature, *bucket_of, bucket_count);
    for (std::size_t b = 0; b < counts.size(); ++b) {
      auto row = key_fields(key, fold);
      for (auto v : {b, counts[b].promoted, counts[b].demoted, counts[b].unchanged}) row.push_back(num(v));
      out.bucket_rows.push_back(std::move(row));
    }
  }

  // Confusion partition positions are mapped to observation ids.
  auto parts = confusion_partition(predicted, actual);
  const auto& obs = ranks.observations();
  for (auto* v : {&parts.true_positive, &parts.false_positive, &parts.true_negative, &parts.false_negative}) {
    for (auto& i : *v) i = obs[i];
  }
  const auto sub = subgroup_rank_stats(ranks, parts, key.feature);
  const std::pair<const char*, const RankDistribution*> groups[] = {{"TP", &sub.true_positive},
                                                                    {"FP", &sub.false_positive},
                                                                    {"TN", &sub.true_negative},
                                                                    {"FN", &sub.false_negative}};
  for (const auto& [name, dist] : groups) {
    for (const auto& [r, count] : *dist) {
      auto row = key_fields(key, fold);
      row.push_back(name);
      row.push_back(num(r));
      row.push_back(num(count));
      out.subgroup_rows.push_back(std::move(row));
    }
  }
}

FoldSensitivity sensitivity_fold(const ExperimentConfig& cfg, const Dataset& d, const FoldSplit& split,
                                 std::size_t fold, const std::string& feature) {
  const auto t0 = std::chrono::steady_clock::now();
  FoldSensitivity out;
  const std::uint64_t fs = derive_seed(cfg.seed, "fold-" + std::to_string(fold));
  const TransformSpec base_spec;
  const Hyperparams params = select_hyperparams(d, base_spec, split.train, cfg.grid, derive_seed(fs, "grid")).best;
  const std::uint64_t model_seed = derive_seed(fs, "model");
  const std::uint64_t bg_seed = derive_seed(fs, "background");
  const ExplainMethod method = explain_method(cfg.explainer, derive_seed(fs, "explain"));
  const auto actual = targets_of(d, split.test);

  // Base representation.
  const auto base_model = fit(d, base_spec, split.train, params, model_seed);
  const auto base_test = apply_pipeline(d, base_spec, split.test);
  const auto reference = base_model.labels(base_test.values);
  const auto base_bg = background_for(d, base_spec, split.train, cfg.explainer.background, bg_seed,
                                      "fold-" + std::to_string(fold) + "/train");
  const auto base_columns = explain_rows(base_model, base_test.values, base_bg, method, split.test, 1);
  const auto base_grouped = aggregate_groups(base_columns, base_test.groups);
  const RankTable base_ranks(base_grouped);
  out.base_explanations = explanations_csv(base_columns, base_test.column_names);
  out.base_grouped = explanations_csv(base_grouped, method.tag());
  out.base_model = base_model.serialize();

  auto run_representation = [&](const SeriesKey& key, const TransformSpec& spec, const BucketSpec* buckets) {
    const auto model = fit(d, spec, split.train, params, model_seed);
    const auto test = apply_pipeline(d, spec, split.test);
    const auto bg = background_for(d, spec, split.train, cfg.explainer.background, bg_seed, "");
    const auto grouped =
        aggregate_groups(explain_rows(model, test.values, bg, method, split.test, 1), test.groups);
    const RankTable ranks(grouped);
    std::vector<std::size_t> bucket_of;
    if (buckets != nullptr) {
      const std::size_t f = d.schema().index_of(buckets->feature);
      for (std::size_t r : split.test) bucket_of.push_back(buckets->bucket_of(d.value(r, f)));
    }
    record_series(out, key, fold, grouped, ranks, base_ranks, reference, model.labels(test.values), actual,
                  test.clamped, buckets ? &bucket_of : nullptr, buckets ? buckets->bucket_count() : 0);
  };

  // Base row so every metric has a reference point.
  record_series(out, {feature, "base", 0}, fold, base_grouped, base_ranks, base_ranks, reference,
                reference, actual, 0, nullptr, 0);

  if (!cfg.strategies.empty()) {
    const std::size_t f = d.schema().index_of(feature);
    if (d.schema().feature(f).is_categorical()) {
      throw ArgumentError("bucket strategies need a non-categorical protected feature");
    }
    const auto train_values = d.column(f, split.train);
    const auto [lo, hi] = std::minmax_element(train_values.begin(), train_values.end());
    for (const auto& strategy : cfg.strategies) {
      for (std::size_t k : cfg.bucket_counts()) {
        const auto boundaries =
            strategy == "equi-width" ? equi_width_boundaries(*lo, *hi, k) : equi_depth_boundaries(train_values, k);
        const auto buckets = make_bucket_spec(feature, boundaries, cfg.representative, train_values);
        TransformSpec spec;
        spec.set(buckets);
        run_representation({feature, strategy, k}, spec, &buckets);
      }
    }
  }

  if (!cfg.ovr_feature.empty()) {
    const auto& desc = d.schema().feature(cfg.ovr_feature);
    if (!desc.is_categorical()) throw ArgumentError("one-vs-rest needs a categorical feature");
    // Base series of the OvR feature itself.
    record_series(out, {desc.name, "base", 0}, fold, base_grouped, base_ranks, base_ranks, reference, reference,
                  actual, 0, nullptr, 0);
    for (const auto& merge : one_vs_rest_specs(desc.name, desc.categories)) {
      TransformSpec spec;
      spec.set(merge);
      run_representation({desc.name, "ovr-" + merge.blocks.front().name, 2}, spec, nullptr);
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

template <typename Fn>
RunManifest with_manifest(const ExperimentConfig& cfg, Fn&& body) {
  RunManifest manifest;
  manifest.config = cfg.to_json();
  manifest.version = kVersion;
  const auto t0 = std::chrono::steady_clock::now();
  RunWriter writer(cfg.run_dir());
  try {
    body(writer, manifest);
  } catch (const std::exception& e) {
    manifest.status = "failed";
    const auto* err = dynamic_cast<const Error*>(&e);
    manifest.error = {{"kind", err ? err->kind() : "internal"}, {"message", e.what()}};
    manifest.artifacts = writer.artifacts();
    manifest.timings["total_seconds"] = seconds_since(t0);
    manifest.save(writer.dir());
    throw;
  }
  manifest.artifacts = writer.artifacts();
  for (const auto& a : manifest.artifacts) {
    if (!fs::exists(writer.dir() / a)) throw IoError("declared artifact missing: " + a);
  }
  manifest.status = "ok";
  manifest.timings["total_seconds"] = seconds_since(t0);
  manifest.save(writer.dir());
  return manifest;
}

}  // namespace

RunManifest run_sensitivity(const ExperimentConfig& cfg) {
  cfg.validate();
  return with_manifest(cfg, [&](RunWriter& w, RunManifest& manifest) {
    const Dataset d = load_dataset(cfg.data);
    const std::string feature = resolve_protected(cfg, d.schema());
    const auto folds = split_kfold(d, cfg.folds, derive_seed(cfg.seed, "folds"));

    std::vector<FoldSensitivity> results(folds.size());
    parallel_for(
        folds.size(), [&](std::size_t f) { results[f] = sensitivity_fold(cfg, d, folds[f], f, feature); },
        cfg.threads);

    Csv metrics({"feature", "strategy", "buckets", "fold", "metric", "value"});
    Csv shifts({"feature", "strategy", "buckets", "fold", "shift", "count"});
    Csv per_bucket({"feature", "strategy", "buckets", "fold", "bucket", "promoted", "demoted", "unchanged"});
    Csv subgroups({"feature", "strategy", "buckets", "fold", "subgroup", "rank", "count"});
    // (feature, strategy, buckets, metric) -> per-fold values, in first-seen order
    std::vector<std::vector<std::string>> order;
    std::map<std::vector<std::string>, std::vector<double>> series;
    for (std::size_t f = 0; f < results.size(); ++f) {
      const auto& r = results[f];
      for (const auto& row : r.metric_rows) {
        metrics.row(row);
        std::vector<std::string> key{row[0], row[1], row[2], row[4]};
        if (!series.count(key)) order.push_back(key);
        series[key].push_back(row[5] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(row[5]));
      }
      for (const auto& row : r.shift_rows) shifts.row(row);
      for (const auto& row : r.bucket_rows) per_bucket.row(row);
      for (const auto& row : r.subgroup_rows) subgroups.row(row);
      w.text("explanations/fold-" + std::to_string(f) + "-base.csv", r.base_explanations);
      w.text("explanations/fold-" + std::to_string(f) + "-base-grouped.csv", r.base_grouped);
      w.text("models/fold-" + std::to_string(f) + "-base.json", r.base_model);
      manifest.timings["fold-" + std::to_string(f)] = r.seconds;
    }
    Csv summary({"feature", "strategy", "buckets", "metric", "mean", "std", "n"});
    // One long-format file per metric: fold mean and standard error.
    std::vector<std::string> metric_names;
    std::map<std::string, Csv> per_metric;
    for (const auto& key : order) {
      const Stats s = stats(series[key]);
      summary.row({key[0], key[1], key[2], key[3], num(s.mean), num(s.std), num(s.n)});
      auto it = per_metric.find(key[3]);
      if (it == per_metric.end()) {
        metric_names.push_back(key[3]);
        it = per_metric.emplace(key[3], Csv({"experiment", "feature", "strategy", "buckets", "metric", "value", "stderr"}))
                 .first;
      }
      const double se = s.n > 0 ? s.std / std::sqrt(static_cast<double>(s.n)) : s.std;
      it->second.row({cfg.name, key[0], key[1], key[2], key[3], num(s.mean), num(se)});
    }
    for (const auto& m : metric_names) w.csv("metrics/" + m + ".csv", per_metric.at(m));
    w.csv("metrics/folds.csv", metrics);
    w.csv("metrics/summary.csv", summary);
    w.csv("metrics/rank_shift.csv", shifts);
    w.csv("metrics/bucket_shift.csv", per_bucket);
    w.csv("metrics/subgroup_rank.csv", subgroups);
  });
}

namespace {

std::vector<std::string> eval_fields(const AttackEvaluation& e) {
  return {num(e.mean_rank), num(e.fidelity), num(e.mean_abs_weight), e.feasible ? "1" : "0", num(e.objective)};
}

std::string trace_csv(const AttackResult& r, std::size_t k) {
  std::vector<std::string> header{"iteration", "phase"};
  if (k > 0) {
    for (std::size_t i = 0; i <= k; ++i) header.push_back("b" + std::to_string(i));
  } else {
    header.push_back("spec");
  }
  for (const char* h : {"rank", "fidelity", "mean_abs_weight", "feasible", "objective", "best_objective"}) {
    header.push_back(h);
  }
  Csv c(header);
  for (const auto& t : r.trace) {
    std::vector<std::string> row{num(t.iteration), t.phase};
    if (k > 0) {
      for (double b : t.boundaries) row.push_back(num(b));
    } else {
      row.push_back(t.merge ? t.merge->label() : "");
    }
    for (auto& f : eval_fields(t.eval)) row.push_back(std::move(f));
    row.push_back(num(t.best_objective));
    c.row(row);
  }
  return c.str();
}

struct FoldAttack {
  std::vector<AttackResult> results;  // one per bucket count (bucket) or one (merge)
  double seconds = 0.0;
};

AttackContext fold_context(const ExperimentConfig& cfg, const Dataset& d, const FoldSplit& split, std::size_t fold) {
  const std::uint64_t fs = derive_seed(cfg.seed, "fold-" + std::to_string(fold));
  const Hyperparams params = select_hyperparams(d, {}, split.train, cfg.grid, derive_seed(fs, "grid")).best;
  return make_attack_context(d, split.train, split.test, params, cfg.explainer.background, derive_seed(fs, "attack"));
}

void write_stat_rows(Csv& csv, const std::vector<std::string>& prefix, const std::string& method,
                     const std::vector<double>& values) {
  const Stats s = stats(values);
  auto row = prefix;
  row.push_back(method);
  row.push_back(num(s.mean));
  row.push_back(num(s.std));
  csv.row(row);
}

}  // namespace

RunManifest run_attack(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.explainer.method != "tree") {
    throw CapabilityError("attacks evaluate explanations with the tree explainer only");
  }
  const bool merge = cfg.protocol == Protocol::kAttackMerge;
  return with_manifest(cfg, [&](RunWriter& w, RunManifest& manifest) {
    const Dataset d = load_dataset(cfg.data);
    AttackConfig base_cfg = cfg.attack;
    base_cfg.protected_feature = resolve_protected(cfg, d.schema());
    const auto folds = split_kfold(d, cfg.folds, derive_seed(cfg.seed, "folds"));
    const auto ks = merge ? std::vector<std::size_t>{0} : cfg.bucket_counts();

    std::optional<std::vector<MergeSpec>> candidates;
    if (merge && !cfg.merge_candidates.empty()) {
      candidates.emplace();
      for (const auto& p : cfg.merge_candidates) candidates->push_back(MergeSpec::from_groups(base_cfg.protected_feature, p));
    }

    std::vector<FoldAttack> results(folds.size());
    parallel_for(
        folds.size(),
        [&](std::size_t f) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto ctx = fold_context(cfg, d, folds[f], f);
          const std::uint64_t fs = derive_seed(cfg.seed, "fold-" + std::to_string(f));
          for (std::size_t k : ks) {
            AttackConfig a = base_cfg;
            if (merge) {
              a.seed = derive_seed(fs, "merge");
              results[f].results.push_back(merge_attack(a, ctx, candidates));
            } else {
              a.buckets = k;
              a.seed = derive_seed(fs, "bo-k" + std::to_string(k));
              results[f].results.push_back(bo_attack(a, ctx));
            }
          }
          results[f].seconds = seconds_since(t0);
        },
        cfg.threads);

    json summary = json::object();
    summary["protected"] = base_cfg.protected_feature;
    summary["mode"] = to_string(base_cfg.mode);
    Csv per_fold({"buckets", "fold", "method", "rank", "fidelity", "mean_abs_weight", "feasible", "objective", "epsilon"});
    Csv ranks({"buckets", "method", "mean", "std"});
    Csv fid({"buckets", "method", "mean", "std"});
    Csv weights({"buckets", "method", "mean", "std"});
    json per_k = json::array();
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const std::size_t k = ks[ki];
      std::map<std::string, std::vector<double>> rank_v, fid_v, weight_v;
      std::vector<double> eps;
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& r = results[f].results[ki];
        const std::string tag = merge ? "fold-" + std::to_string(f) : "k" + std::to_string(k) + "-fold-" + std::to_string(f);
        w.text("attack/trace-" + tag + ".csv", trace_csv(r, k));
        TransformSpec best_spec;
        if (r.best_buckets) best_spec.set(*r.best_buckets);
        if (r.best_merge) best_spec.set(*r.best_merge);
        w.json_file("attack/best-" + tag + ".json", best_spec.to_json());
        std::vector<std::pair<std::string, const AttackEvaluation*>> methods{{"base", &r.base}};
        if (r.equi_width) methods.emplace_back("equi_width", &*r.equi_width);
        methods.emplace_back("attack", &r.best);
        for (const auto& [name, e] : methods) {
          std::vector<std::string> row{num(k), num(f), name};
          for (auto& x : eval_fields(*e)) row.push_back(std::move(x));
          row.push_back(num(r.epsilon));
          per_fold.row(row);
          rank_v[name].push_back(e->mean_rank);
          fid_v[name].push_back(e->fidelity);
          weight_v[name].push_back(e->mean_abs_weight);
        }
        eps.push_back(r.epsilon);
      }
      json entry{{"buckets", k}};
      for (const std::string name : {"base", "equi_width", "attack"}) {
        if (!rank_v.count(name)) continue;
        write_stat_rows(ranks, {num(k)}, name, rank_v[name]);
        write_stat_rows(fid, {num(k)}, name, fid_v[name]);
        write_stat_rows(weights, {num(k)}, name, weight_v[name]);
        entry[name] = {{"rank", stats(rank_v[name]).mean}, {"fidelity", stats(fid_v[name]).mean},
                       {"mean_abs_weight", stats(weight_v[name]).mean}};
      }
      entry["epsilon"] = stats(eps).mean;
      per_k.push_back(entry);
    }
    summary["results"] = per_k;

    if (merge) {
      // Fidelity table over every evaluated spec, folds aggregated.
      Csv table({"spec", "rank_mean", "rank_std", "fidelity_mean", "fidelity_std", "abs_weight_mean", "abs_weight_std"});
      std::vector<std::string> order{"Base"};
      std::map<std::string, std::array<std::vector<double>, 3>> by_spec;
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& r = results[f].results.front();
        auto& b = by_spec["Base"];
        b[0].push_back(r.base.mean_rank);
        b[1].push_back(r.base.fidelity);
        b[2].push_back(r.base.mean_abs_weight);
        for (const auto& t : r.trace) {
          const std::string label = t.merge->label();
          if (!by_spec.count(label)) order.push_back(label);
          auto& v = by_spec[label];
          v[0].push_back(t.eval.mean_rank);
          v[1].push_back(t.eval.fidelity);
          v[2].push_back(t.eval.mean_abs_weight);
        }
      }
      for (const auto& label : order) {
        const auto& v = by_spec[label];
        const Stats a = stats(v[0]), b = stats(v[1]), c = stats(v[2]);
        table.row({label, num(a.mean), num(a.std), num(b.mean), num(b.std), num(c.mean), num(c.std)});
      }
      w.csv("attack/specs.csv", table);
      json best = json::array();
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& r = results[f].results.front();
        best.push_back({{"fold", f}, {"spec", r.best_merge ? r.best_merge->label() : ""}, {"feasible", r.feasible}});
      }
      summary["best"] = best;
    }
    w.csv("attack/folds.csv", per_fold);
    w.csv("attack/ranks.csv", ranks);
    w.csv("attack/fidelity.csv", fid);
    w.csv("attack/weights.csv", weights);
    w.json_file("attack/summary.json", summary);
    w.json_file("attack/config.json", cfg.to_json());
    for (std::size_t f = 0; f < results.size(); ++f) manifest.timings["fold-" + std::to_string(f)] = results[f].seconds;
  });
}

RunManifest run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  return with_manifest(cfg, [&](RunWriter& w, RunManifest&) {
    const Dataset d = load_dataset(cfg.data);
    const TransformSpec spec = cfg.transform.empty() ? TransformSpec{} : TransformSpec::load(cfg.transform);
    spec.validate(d.schema());
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), 0);
    const auto grid = select_hyperparams(d, spec, rows, cfg.grid, derive_seed(cfg.seed, "grid"));
    Csv scores({"max_depth", "rounds", "learning_rate", "accuracy"});
    for (const auto& [h, acc] : grid.scores) scores.row({num(h.max_depth), num(h.rounds), num(h.learning_rate), num(acc)});
    const auto model = fit(d, spec, rows, grid.best, derive_seed(cfg.seed, "model"));
    w.text("models/model.json", model.serialize());
    w.json_file("models/transform.json", spec.to_json());
    w.json_file("models/hyperparams.json", grid.best.to_json());
    w.csv("metrics/grid.csv", scores);
  });
}

RunManifest run_explain(const ExperimentConfig& cfg) {
  cfg.validate();
  return with_manifest(cfg, [&](RunWriter& w, RunManifest&) {
    const Dataset d = load_dataset(cfg.data);
    const TransformSpec spec = cfg.transform.empty() ? TransformSpec{} : TransformSpec::load(cfg.transform);
    spec.validate(d.schema());
    const auto model = TreeEnsembleModel::load(cfg.model);
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), 0);
    const auto x = apply_pipeline(d, spec, rows);
    if (x.cols() != model.width()) {
      throw SchemaError("model expects " + std::to_string(model.width()) + " columns, representation has " +
                        std::to_string(x.cols()));
    }
    const auto bg = background_for(d, spec, rows, cfg.explainer.background, derive_seed(cfg.seed, "background"), "data");
    const auto method = explain_method(cfg.explainer, derive_seed(cfg.seed, "explain"));
    const auto es = explain_rows(model, x.values, bg, method, rows, cfg.threads);
    const auto grouped = aggregate_groups(es, x.groups);
    w.text("explanations/explanations.csv", explanations_csv(es, x.column_names));
    w.text("explanations/grouped.csv", explanations_csv(grouped, method.tag()));
    const auto reference = model.labels(x.values);
    w.json_file("metrics/fidelity.json", {{"lambda", fidelity(grouped, reference).lambda},
                                          {"observations", grouped.size()},
                                          {"method", method.tag()}});
  });
}

RunManifest run_protocol(const ExperimentConfig& cfg) {
  switch (cfg.protocol) {
    case Protocol::kSensitivity: return run_sensitivity(cfg);
    case Protocol::kAttackBucket:
    case Protocol::kAttackMerge: return run_attack(cfg);
    case Protocol::kTrain: return run_train(cfg);
    case Protocol::kExplain: return run_explain(cfg);
  }
  throw ArgumentError("unknown protocol");
}

std::string report(const fs::path& run_dir) {
  const fs::path manifest_path = run_dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("no manifest in " + run_dir.string());
  const json manifest = json::parse(in);
  std::ostringstream out;
  out << "run: " << run_dir.string() << "\n";
  out << "protocol: " << manifest.at("config").value("protocol", "?") << "\n";
  out << "status: " << manifest.value("status", "?") << "\n";
  for (const char* rel : {"metrics/summary.csv", "attack/ranks.csv", "attack/fidelity.csv", "attack/specs.csv",
                          "metrics/grid.csv", "metrics/fidelity.json"}) {
    std::ifstream f(run_dir / rel);
    if (!f) continue;
    out << "\n== " << rel << "\n" << f.rdbuf();
  }
  return out.str();
}

}  // namespace shapsens
