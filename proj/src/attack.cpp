#include "shapsens/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "shapsens/error.hpp"
#include "shapsens/gp.hpp"
#include "shapsens/metrics.hpp"
#include "shapsens/random.hpp"

namespace shapsens {

std::string to_string(AttackMode mode) { return mode == AttackMode::kRetrain ? "retrain" : "fixed-model"; }

AttackMode attack_mode_from_string(const std::string& text) {
  if (text == "fixed-model" || text == "fixed") return AttackMode::kFixedModel;
  if (text == "retrain") return AttackMode::kRetrain;
  throw ArgumentError("unknown attack mode '" + text + "'");
}

void AttackConfig::validate() const {
  if (!(lo < hi)) throw ArgumentError("attack domain needs lo < hi");
  if (buckets < 1) throw ArgumentError("attack bucket count must be at least 1");
  if (initial_samples < 1) throw ArgumentError("attack needs at least one initial sample");
  if (budget < initial_samples) throw ArgumentError("attack budget must cover the initial samples");
  if (candidates < 1) throw ArgumentError("attack needs at least one EI candidate");
  if (!(length_scale_fraction > 0.0)) throw ArgumentError("length-scale fraction must be positive");
  if (max_blocks < 2) throw ArgumentError("merge attack needs max_blocks >= 2");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"protected", protected_feature},
          {"mode", to_string(mode)},
          {"buckets", buckets},
          {"lo", lo},
          {"hi", hi},
          {"budget", budget},
          {"initial_samples", initial_samples},
          {"inject_equi_width", inject_equi_width},
          {"integer_boundaries", integer_boundaries},
          {"epsilon_policy", epsilon_policy == EpsilonPolicy::kAbsolute ? "absolute" : "match-equi-width"},
          {"epsilon", epsilon},
          {"seed", seed},
          {"length_scale_fraction", length_scale_fraction},
          {"jitter", jitter},
          {"exploration", exploration},
          {"candidates", candidates},
          {"max_blocks", max_blocks},
          {"max_enumerated_categories", max_enumerated_categories}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.protected_feature = j.value("protected", c.protected_feature);
  c.mode = attack_mode_from_string(j.value("mode", to_string(c.mode)));
  c.buckets = j.value("buckets", c.buckets);
  c.lo = j.value("lo", c.lo);
  c.hi = j.value("hi", c.hi);
  c.budget = j.value("budget", c.budget);
  c.initial_samples = j.value("initial_samples", c.initial_samples);
  c.inject_equi_width = j.value("inject_equi_width", c.inject_equi_width);
  c.integer_boundaries = j.value("integer_boundaries", c.integer_boundaries);
  const std::string policy = j.value("epsilon_policy", std::string("match-equi-width"));
  if (policy == "absolute") c.epsilon_policy = EpsilonPolicy::kAbsolute;
  else if (policy == "match-equi-width") c.epsilon_policy = EpsilonPolicy::kMatchEquiWidth;
  else throw ArgumentError("unknown epsilon policy '" + policy + "'");
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  c.length_scale_fraction = j.value("length_scale_fraction", c.length_scale_fraction);
  c.jitter = j.value("jitter", c.jitter);
  c.exploration = j.value("exploration", c.exploration);
  c.candidates = j.value("candidates", c.candidates);
  c.max_blocks = j.value("max_blocks", c.max_blocks);
  c.max_enumerated_categories = j.value("max_enumerated_categories", c.max_enumerated_categories);
  c.validate();
  return c;
}

AttackContext make_attack_context(const Dataset& data, std::vector<std::size_t> train_rows,
                                  std::vector<std::size_t> eval_rows, const Hyperparams& params,
                                  std::size_t background_size, std::uint64_t seed, TransformSpec base_spec) {
  if (train_rows.empty() || eval_rows.empty()) throw ArgumentError("attack needs train and eval rows");
  AttackContext ctx;
  ctx.data = &data;
  ctx.base_spec = std::move(base_spec);
  ctx.retrain_params = params;
  ctx.retrain_seed = derive_seed(seed, "retrain");

  const auto train = apply_pipeline(data, ctx.base_spec, train_rows);
  std::vector<int> y;
  for (std::size_t r : train_rows) y.push_back(data.targets()[r]);
  ctx.model = train_gbt(train, y, params, derive_seed(seed, "model"));

  for (std::size_t i : background_indices(train_rows.size(), background_size, derive_seed(seed, "background"))) {
    ctx.background_rows.push_back(train_rows[i]);
  }
  const auto eval = apply_pipeline(data, ctx.base_spec, eval_rows);
  ctx.reference_labels = ctx.model.labels(eval.values);
  ctx.train_rows = std::move(train_rows);
  ctx.eval_rows = std::move(eval_rows);
  return ctx;
}

namespace {

// Replaces each category of `feature` by the most frequent training member
// of its merge block, keeping the original category list.
Dataset remap_to_representatives(const AttackContext& ctx, const MergeSpec& merge) {
  const Dataset& d = *ctx.data;
  const std::size_t f = d.schema().index_of(merge.feature);
  const auto& categories = d.schema().feature(f).categories;
  merge.validate(categories);

  std::vector<std::size_t> counts(categories.size(), 0);
  for (std::size_t r : ctx.train_rows) ++counts[static_cast<std::size_t>(d.value(r, f))];

  std::vector<double> code_map(categories.size());
  for (const auto& block : merge.blocks) {
    std::size_t best = categories.size();
    for (std::size_t c = 0; c < categories.size(); ++c) {
      if (std::find(block.members.begin(), block.members.end(), categories[c]) == block.members.end()) continue;
      if (best == categories.size() || counts[c] > counts[best]) best = c;
    }
    for (const auto& m : block.members) code_map[*d.schema().feature(f).category_index(m)] = static_cast<double>(best);
  }
  auto rows = d.rows();
  for (auto& row : rows) row[f] = code_map[static_cast<std::size_t>(row[f])];
  return Dataset(d.schema(), std::move(rows), d.targets());
}

RepresentationOutcome summarize(std::vector<GroupedExplanation> grouped, const AttackContext& ctx,
                                const std::string& feature) {
  RepresentationOutcome out;
  const RankTable ranks(grouped);
  out.mean_rank = avg_rank(ranks, feature);
  out.fidelity = fidelity(grouped, ctx.reference_labels).lambda;
  out.mean_abs_weight = avg_abs_shap(grouped, feature);
  out.explanations = std::move(grouped);
  return out;
}

AttackEvaluation to_evaluation(const RepresentationOutcome& o, const AttackContext& ctx, double epsilon) {
  const auto features = static_cast<double>(ctx.data->schema().size());
  AttackEvaluation e;
  e.mean_rank = o.mean_rank;
  e.fidelity = o.fidelity;
  e.mean_abs_weight = o.mean_abs_weight;
  e.feasible = o.fidelity >= epsilon;
  e.objective = o.mean_rank - 10.0 * features * std::max(0.0, epsilon - o.fidelity);
  return e;
}

BucketSpec bucket_spec_for(const std::vector<double>& boundaries, const AttackConfig& cfg, const AttackContext& ctx) {
  const std::size_t f = ctx.data->schema().index_of(cfg.protected_feature);
  if (cfg.mode == AttackMode::kRetrain) {
    return make_bucket_spec(cfg.protected_feature, boundaries, Representative::kIndex);
  }
  return make_bucket_spec(cfg.protected_feature, boundaries, Representative::kMedian,
                          ctx.data->column(f, ctx.train_rows));
}

}  // namespace

RepresentationOutcome evaluate_representation(const AttackContext& ctx, const AttackConfig& cfg,
                                              const std::optional<BucketSpec>& buckets,
                                              const std::optional<MergeSpec>& merge) {
  if (ctx.data == nullptr) throw ArgumentError("attack context has no dataset");
  const Dataset* data = ctx.data;
  TransformSpec spec = ctx.base_spec;
  if (buckets) spec.set(*buckets);

  std::optional<Dataset> remapped;
  if (merge) {
    if (cfg.mode == AttackMode::kFixedModel) {
      remapped = remap_to_representatives(ctx, *merge);
      data = &*remapped;
    } else {
      spec.set(*merge);
    }
  }

  const TreeEnsembleModel* model = &ctx.model;
  TreeEnsembleModel retrained;
  if (cfg.mode == AttackMode::kRetrain && (buckets || merge)) {
    const auto train = apply_pipeline(*data, spec, ctx.train_rows);
    std::vector<int> y;
    for (std::size_t r : ctx.train_rows) y.push_back(data->targets()[r]);
    retrained = train_gbt(train, y, ctx.retrain_params, ctx.retrain_seed);
    model = &retrained;
  }

  const auto eval = apply_pipeline(*data, spec, ctx.eval_rows);
  const auto bg_encoded = apply_pipeline(*data, spec, ctx.background_rows);
  const Background bg{bg_encoded.values, "train-subsample", 0};
  const auto explanations = tree_shapley_batch(*model, eval.values, bg, nullptr, ctx.eval_rows);
  return summarize(aggregate_groups(explanations, eval.groups), ctx, cfg.protected_feature);
}

AttackEvaluation attack_objective(const std::vector<double>& boundaries, const AttackConfig& cfg,
                                  const AttackContext& ctx, double epsilon) {
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (!(boundaries[i - 1] < boundaries[i])) throw ArgumentError("attack boundaries must be strictly increasing");
  }
  if (boundaries.size() < 2) throw ArgumentError("attack needs at least two boundaries");
  const auto outcome = evaluate_representation(ctx, cfg, bucket_spec_for(boundaries, cfg, ctx), std::nullopt);
  return to_evaluation(outcome, ctx, epsilon);
}

AttackEvaluation merge_objective(const MergeSpec& spec, const AttackConfig& cfg, const AttackContext& ctx,
                                 double epsilon) {
  return to_evaluation(evaluate_representation(ctx, cfg, std::nullopt, spec), ctx, epsilon);
}

AttackEvaluation base_evaluation(const AttackConfig& cfg, const AttackContext& ctx) {
  return to_evaluation(evaluate_representation(ctx, cfg, std::nullopt, std::nullopt), ctx, 0.0);
}

AttackEvaluation equi_width_baseline(const AttackConfig& cfg, const AttackContext& ctx, double epsilon) {
  return attack_objective(equi_width_boundaries(cfg.lo, cfg.hi, cfg.buckets), cfg, ctx, epsilon);
}

namespace {

// Index of the reported best: feasible with maximal mean rank, else the
// least-infeasible point. Earliest wins ties.
std::size_t select_best(const std::vector<TraceEntry>& trace, bool& feasible) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& e = trace[i].eval;
    if (!e.feasible) continue;
    if (!best || e.mean_rank > trace[*best].eval.mean_rank) best = i;
  }
  feasible = best.has_value();
  if (best) return *best;
  std::size_t least = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const auto& e = trace[i].eval;
    const auto& b = trace[least].eval;
    if (e.fidelity > b.fidelity || (e.fidelity == b.fidelity && e.objective > b.objective)) least = i;
  }
  return least;
}

class BoundarySampler {
 public:
  BoundarySampler(const AttackConfig& cfg, std::size_t dim) : cfg_(cfg), dim_(dim) {
    if (cfg.integer_boundaries) {
      imin_ = static_cast<long>(std::floor(cfg.lo)) + 1;
      imax_ = static_cast<long>(std::ceil(cfg.hi)) - 1;
      if (imax_ - imin_ + 1 < static_cast<long>(dim)) {
        throw ArgumentError("integer domain has fewer interior points than boundaries to place");
      }
    }
  }

  // Sorted, strictly increasing interior boundaries strictly inside (lo, hi).
  std::vector<double> draw(Rng& rng) const {
    std::vector<double> x(dim_);
    while (true) {
      if (cfg_.integer_boundaries) {
        std::uniform_int_distribution<long> dist(imin_, imax_);
        for (auto& v : x) v = static_cast<double>(dist(rng));
      } else {
        std::uniform_real_distribution<double> dist(cfg_.lo, cfg_.hi);
        for (auto& v : x) v = dist(rng);
      }
      std::sort(x.begin(), x.end());
      bool ok = true;
      for (std::size_t i = 0; i < dim_; ++i) {
        if (!(x[i] > cfg_.lo && x[i] < cfg_.hi)) ok = false;
        if (i > 0 && !(x[i - 1] < x[i])) ok = false;
      }
      if (ok) return x;
    }
  }

  // Number of distinct points, saturating; used to stop when exhausted.
  double space_size() const {
    if (!cfg_.integer_boundaries) return std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(imax_ - imin_ + 1);
    double c = 1.0;
    for (std::size_t i = 0; i < dim_; ++i) c = c * (n - static_cast<double>(i)) / static_cast<double>(i + 1);
    return c;
  }

 private:
  const AttackConfig& cfg_;
  std::size_t dim_;
  long imin_ = 0;
  long imax_ = 0;
};

std::vector<double> full_boundaries(const AttackConfig& cfg, const std::vector<double>& interior) {
  std::vector<double> b{cfg.lo};
  b.insert(b.end(), interior.begin(), interior.end());
  b.push_back(cfg.hi);
  return b;
}

}  // namespace

AttackResult bo_attack(const AttackConfig& cfg, const AttackContext& ctx) {
  cfg.validate();
  if (ctx.data == nullptr) throw ArgumentError("attack context has no dataset");
  if (ctx.data->schema().feature(cfg.protected_feature).is_categorical()) {
    throw ArgumentError("bucket attack needs a non-categorical protected feature; use merge_attack");
  }

  AttackResult result;
  result.base = base_evaluation(cfg, ctx);
  const auto equi = equi_width_baseline(cfg, ctx, 0.0);
  result.equi_width = equi;
  result.epsilon = cfg.epsilon_policy == EpsilonPolicy::kMatchEquiWidth ? equi.fidelity : cfg.epsilon;
  result.equi_width = to_evaluation(RepresentationOutcome{{}, equi.mean_rank, equi.fidelity, equi.mean_abs_weight},
                                    ctx, result.epsilon);

  const std::size_t dim = cfg.buckets - 1;
  double running = -std::numeric_limits<double>::infinity();
  std::set<std::vector<double>> seen;
  std::vector<std::vector<double>> inputs;
  std::vector<double> objectives;

  auto record = [&](const std::string& phase, const std::vector<double>& interior, const AttackEvaluation& eval) {
    running = std::max(running, eval.objective);
    result.trace.push_back({result.trace.size(), phase, full_boundaries(cfg, interior), std::nullopt, eval, running});
    seen.insert(interior);
    inputs.push_back(interior);
    objectives.push_back(eval.objective);
  };
  auto evaluate = [&](const std::vector<double>& interior) {
    return attack_objective(full_boundaries(cfg, interior), cfg, ctx, result.epsilon);
  };

  if (cfg.inject_equi_width || dim == 0) {
    auto b = equi_width_boundaries(cfg.lo, cfg.hi, cfg.buckets);
    std::vector<double> interior(b.begin() + 1, b.end() - 1);
    record("equi-width", interior, *result.equi_width);
  }

  if (dim > 0) {
    const BoundarySampler sampler(cfg, dim);
    const double space = sampler.space_size();
    Rng init_rng = make_rng(cfg.seed, "bo/initial");
    Rng cand_rng = make_rng(cfg.seed, "bo/candidates");
    std::size_t evaluations = 0;

    while (evaluations < cfg.initial_samples && static_cast<double>(seen.size()) < space) {
      auto x = sampler.draw(init_rng);
      if (seen.count(x)) continue;
      record("initial", x, evaluate(x));
      ++evaluations;
    }

    const std::vector<double> scales(dim, cfg.length_scale_fraction * (cfg.hi - cfg.lo));
    while (evaluations < cfg.budget && static_cast<double>(seen.size()) < space) {
      GaussianProcess gp(scales, cfg.jitter);
      gp.fit(inputs, objectives);
      const double best = gp.standardize(*std::max_element(objectives.begin(), objectives.end()));

      std::optional<std::vector<double>> chosen;
      double chosen_ei = -1.0;
      for (std::size_t c = 0; c < cfg.candidates; ++c) {
        auto x = sampler.draw(cand_rng);
        if (seen.count(x)) continue;
        const auto p = gp.predict_standardized(x);
        const double ei = expected_improvement(p.mean, p.variance, best, cfg.exploration);
        if (ei > chosen_ei) {
          chosen_ei = ei;
          chosen = std::move(x);
        }
      }
      if (!chosen) {
        // Every candidate was already evaluated; fall back to a fresh draw.
        auto x = sampler.draw(cand_rng);
        if (seen.count(x)) continue;
        chosen = std::move(x);
      }
      record("bo", *chosen, evaluate(*chosen));
      ++evaluations;
    }
  }

  bool feasible = false;
  const std::size_t best = select_best(result.trace, feasible);
  result.feasible = feasible;
  result.best = result.trace[best].eval;
  result.best_buckets = bucket_spec_for(result.trace[best].boundaries, cfg, ctx);
  return result;
}

std::vector<std::vector<std::vector<std::string>>> set_partitions(const std::vector<std::string>& categories,
                                                                  std::size_t min_blocks, std::size_t max_blocks) {
  std::vector<std::vector<std::vector<std::string>>> out;
  const std::size_t n = categories.size();
  if (n == 0) return out;
  // Restricted growth strings: a[0] = 0, a[i] <= 1 + max(a[0..i-1]).
  std::vector<std::size_t> a(n, 0);
  auto emit = [&]() {
    const std::size_t blocks = *std::max_element(a.begin(), a.end()) + 1;
    if (blocks < min_blocks || blocks > max_blocks) return;
    std::vector<std::vector<std::string>> p(blocks);
    for (std::size_t i = 0; i < n; ++i) p[a[i]].push_back(categories[i]);
    out.push_back(std::move(p));
  };
  while (true) {
    emit();
    // Advance to the next restricted growth string.
    std::size_t i = n - 1;
    while (i > 0) {
      const std::size_t prefix_max = *std::max_element(a.begin(), a.begin() + static_cast<long>(i));
      if (a[i] <= prefix_max && a[i] + 1 < max_blocks) break;
      --i;
    }
    if (i == 0) break;
    ++a[i];
    std::fill(a.begin() + static_cast<long>(i) + 1, a.end(), 0);
  }
  return out;
}

AttackResult merge_attack(const AttackConfig& cfg, const AttackContext& ctx,
                          const std::optional<std::vector<MergeSpec>>& candidates) {
  cfg.validate();
  if (ctx.data == nullptr) throw ArgumentError("attack context has no dataset");
  const auto& feature = ctx.data->schema().feature(cfg.protected_feature);
  if (!feature.is_categorical()) throw ArgumentError("merge attack needs a categorical protected feature");

  std::vector<MergeSpec> specs;
  if (candidates) {
    specs = *candidates;
  } else {
    if (feature.categories.size() > cfg.max_enumerated_categories) {
      throw CapabilityError("feature '" + feature.name + "' has " + std::to_string(feature.categories.size()) +
                            " categories; enumeration is limited to " +
                            std::to_string(cfg.max_enumerated_categories) + ", pass an explicit candidate list");
    }
    for (const auto& p : set_partitions(feature.categories, 2, cfg.max_blocks)) {
      specs.push_back(MergeSpec::from_groups(feature.name, p));
    }
  }
  for (const auto& s : specs) s.validate(feature.categories);

  AttackResult result;
  result.base = base_evaluation(cfg, ctx);
  // A fixed fidelity threshold; there is no equi-width analogue for categories.
  result.epsilon = cfg.epsilon;

  double running = -std::numeric_limits<double>::infinity();
  for (const auto& spec : specs) {
    const auto eval = merge_objective(spec, cfg, ctx, result.epsilon);
    running = std::max(running, eval.objective);
    result.trace.push_back({result.trace.size(), candidates ? "candidate" : "enumerate", {}, spec, eval, running});
  }
  if (result.trace.empty()) throw ArgumentError("merge attack has no candidate partitions");

  bool feasible = false;
  const std::size_t best = select_best(result.trace, feasible);
  result.feasible = feasible;
  result.best = result.trace[best].eval;
  result.best_merge = result.trace[best].merge;
  return result;
}

std::vector<MergeSpec> one_vs_rest_specs(const std::string& feature, const std::vector<std::string>& categories) {
  std::vector<MergeSpec> out;
  for (const auto& c : categories) {
    MergeSpec spec{feature, {{c, {c}}, {"Rest", {}}}};
    for (const auto& other : categories) {
      if (other != c) spec.blocks[1].members.push_back(other);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace shapsens
