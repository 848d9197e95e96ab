#include "shapsens/transform.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "shapsens/error.hpp"

namespace shapsens {

std::string to_string(Representative policy) {
  switch (policy) {
    case Representative::kIndex: return "index";
    case Representative::kMedian: return "median";
    case Representative::kMidpoint: return "midpoint";
  }
  return "median";
}

Representative representative_from_string(const std::string& text) {
  if (text == "index") return Representative::kIndex;
  if (text == "median") return Representative::kMedian;
  if (text == "midpoint") return Representative::kMidpoint;
  throw ArgumentError("unknown representative policy '" + text + "'");
}

// ---------------------------------------------------------------- buckets

std::size_t BucketSpec::bucket_of(double v) const {
  // Interior boundaries b_1..b_{k-1}; the bucket index is how many are <= v.
  auto first = boundaries.begin() + 1;
  auto last = boundaries.end() - 1;
  return static_cast<std::size_t>(std::upper_bound(first, last, v) - first);
}

double BucketSpec::representative(std::size_t bucket) const {
  switch (policy) {
    case Representative::kIndex: return static_cast<double>(bucket);
    case Representative::kMidpoint: return 0.5 * (boundaries[bucket] + boundaries[bucket + 1]);
    case Representative::kMedian: return medians.at(bucket);
  }
  return 0.0;
}

void BucketSpec::validate() const {
  if (boundaries.size() < 2) throw ArgumentError("bucket spec for '" + feature + "' needs at least 2 boundaries");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (!std::isfinite(boundaries[i])) throw ArgumentError("bucket boundary is not finite");
    if (i > 0 && !(boundaries[i - 1] < boundaries[i])) {
      throw ArgumentError("bucket boundaries for '" + feature + "' are not strictly increasing");
    }
  }
  if (policy == Representative::kMedian && medians.size() != bucket_count()) {
    throw ArgumentError("bucket spec for '" + feature + "' has no frozen medians");
  }
}

BucketSpec make_bucket_spec(std::string feature, std::vector<double> boundaries, Representative policy,
                            const std::vector<double>& training_values) {
  BucketSpec spec{std::move(feature), std::move(boundaries), policy, {}};
  if (spec.boundaries.size() < 2) throw ArgumentError("bucket spec needs at least 2 boundaries");
  if (policy == Representative::kMedian) {
    std::vector<std::vector<double>> members(spec.bucket_count());
    const double lo = spec.boundaries.front();
    const double hi = spec.boundaries.back();
    for (double v : training_values) {
      if (v < lo || v > hi) continue;
      members[spec.bucket_of(v)].push_back(v);
    }
    for (std::size_t j = 0; j < members.size(); ++j) {
      auto& m = members[j];
      if (m.empty()) {
        spec.medians.push_back(0.5 * (spec.boundaries[j] + spec.boundaries[j + 1]));
        continue;
      }
      std::sort(m.begin(), m.end());
      const std::size_t n = m.size();
      spec.medians.push_back(n % 2 ? m[n / 2] : 0.5 * (m[n / 2 - 1] + m[n / 2]));
    }
  }
  spec.validate();
  return spec;
}

std::vector<double> equi_width_boundaries(double lo, double hi, std::size_t k) {
  if (!(lo < hi)) throw ArgumentError("equi-width bucketing needs lo < hi");
  if (k == 0) throw ArgumentError("bucket count must be at least 1");
  std::vector<double> b(k + 1);
  for (std::size_t j = 0; j <= k; ++j) b[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(k);
  b.front() = lo;
  b.back() = hi;
  return b;
}

std::vector<double> equi_depth_boundaries(std::vector<double> values, std::size_t k) {
  if (values.empty()) throw ArgumentError("equi-depth bucketing needs at least one value");
  if (k == 0) throw ArgumentError("bucket count must be at least 1");
  if (values.size() < k) throw ArgumentError("equi-depth bucketing needs at least k values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double max = values.back();

  std::vector<double> b{values.front()};
  for (std::size_t j = 1; j < k; ++j) {
    const double q = values[j * n / k];
    if (q > b.back()) b.push_back(q);
  }
  if (b.back() == max && b.size() > 1) b.pop_back();
  if (max > b.back()) {
    b.push_back(max);
  } else {
    // All values equal: one bucket of zero width is not representable.
    b.push_back(std::nextafter(max, std::numeric_limits<double>::infinity()));
  }
  return b;
}

BucketizeResult bucketize(const std::vector<double>& values, const BucketSpec& spec) {
  spec.validate();
  BucketizeResult out;
  out.values.reserve(values.size());
  const double lo = spec.boundaries.front();
  const double hi = spec.boundaries.back();
  for (double v : values) {
    if (v < lo || v > hi) ++out.clamped;
    out.values.push_back(spec.representative(spec.bucket_of(v)));
  }
  return out;
}

// ---------------------------------------------------------------- merges

MergeSpec MergeSpec::from_groups(std::string feature, const std::vector<std::vector<std::string>>& groups) {
  MergeSpec spec{std::move(feature), {}};
  for (const auto& g : groups) {
    std::string name;
    for (const auto& m : g) name += (name.empty() ? "" : "+") + m;
    spec.blocks.push_back({name, g});
  }
  return spec;
}

MergeSpec MergeSpec::identity(std::string feature, const std::vector<std::string>& categories) {
  std::vector<std::vector<std::string>> groups;
  for (const auto& c : categories) groups.push_back({c});
  return from_groups(std::move(feature), groups);
}

std::vector<std::string> MergeSpec::block_names() const {
  std::vector<std::string> names;
  for (const auto& b : blocks) names.push_back(b.name);
  return names;
}

std::optional<std::size_t> MergeSpec::block_of(const std::string& token) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (std::find(blocks[i].members.begin(), blocks[i].members.end(), token) != blocks[i].members.end()) return i;
  }
  return std::nullopt;
}

std::string MergeSpec::label() const {
  std::string out;
  for (const auto& b : blocks) {
    if (!out.empty()) out += ", ";
    std::string joined;
    for (const auto& m : b.members) joined += (joined.empty() ? "" : "+") + m;
    out += joined;
  }
  return out;
}

void MergeSpec::validate(const std::vector<std::string>& categories) const {
  std::set<std::string> seen;
  std::set<std::string> names;
  for (const auto& b : blocks) {
    if (b.members.empty()) throw ArgumentError("merge spec for '" + feature + "' has an empty block");
    if (!names.insert(b.name).second) throw ArgumentError("merge spec block name '" + b.name + "' repeats");
    for (const auto& m : b.members) {
      if (std::find(categories.begin(), categories.end(), m) == categories.end()) {
        throw DomainError("merge spec for '" + feature + "' names unknown category '" + m + "'");
      }
      if (!seen.insert(m).second) throw ArgumentError("category '" + m + "' appears in two merge blocks");
    }
  }
  if (seen.size() != categories.size()) {
    throw ArgumentError("merge spec for '" + feature + "' does not cover every category");
  }
}

std::vector<std::string> merge_categories(const std::vector<std::string>& tokens, const MergeSpec& spec) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto block = spec.block_of(t);
    if (!block) throw DomainError("category '" + t + "' is not covered by the merge spec for '" + spec.feature + "'");
    out.push_back(spec.blocks[*block].name);
  }
  return out;
}

OneHotColumns one_hot(const std::vector<std::string>& tokens, const std::vector<std::string>& categories,
                      const std::string& feature) {
  OneHotColumns out;
  for (const auto& c : categories) out.names.push_back(feature.empty() ? c : feature + "=" + c);
  out.values = Matrix(tokens.size(), categories.size(), 0.0);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    auto it = std::find(categories.begin(), categories.end(), tokens[r]);
    if (it == categories.end()) throw DomainError("one-hot: unknown category '" + tokens[r] + "'");
    out.values(r, static_cast<std::size_t>(it - categories.begin())) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------- spec

TransformEntry& TransformSpec::entry(const std::string& feature) {
  for (auto& e : entries_) {
    if (e.feature == feature) return e;
  }
  entries_.push_back({feature, IdentityTransform{}, std::nullopt});
  return entries_.back();
}

void TransformSpec::set(const std::string& feature, FeatureTransform op) { entry(feature).op = std::move(op); }
void TransformSpec::set(BucketSpec spec) {
  const std::string f = spec.feature;
  set(f, std::move(spec));
}
void TransformSpec::set(MergeSpec spec) {
  const std::string f = spec.feature;
  set(f, std::move(spec));
}
void TransformSpec::set_one_hot(const std::string& feature, bool enabled) { entry(feature).one_hot = enabled; }

const FeatureTransform* TransformSpec::find(const std::string& feature) const {
  for (const auto& e : entries_) {
    if (e.feature == feature) return &e.op;
  }
  return nullptr;
}

bool TransformSpec::one_hot(const std::string& feature) const {
  for (const auto& e : entries_) {
    if (e.feature == feature) return e.one_hot.value_or(true);
  }
  return true;
}

void TransformSpec::validate(const Schema& schema) const {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (!seen.insert(e.feature).second) throw ArgumentError("transform spec lists '" + e.feature + "' twice");
    if (!schema.contains(e.feature)) throw SchemaError("transform spec references unknown feature '" + e.feature + "'");
    const auto& f = schema.feature(e.feature);
    if (const auto* b = std::get_if<BucketSpec>(&e.op)) {
      if (f.is_categorical()) throw ArgumentError("cannot bucketize categorical feature '" + e.feature + "'");
      if (b->feature != e.feature) throw ArgumentError("bucket spec feature name mismatch");
      b->validate();
    } else if (const auto* m = std::get_if<MergeSpec>(&e.op)) {
      if (!f.is_categorical()) throw ArgumentError("cannot merge non-categorical feature '" + e.feature + "'");
      if (m->feature != e.feature) throw ArgumentError("merge spec feature name mismatch");
      m->validate(f.categories);
    }
    if (e.one_hot && !f.is_categorical()) {
      throw ArgumentError("one-hot flag set on non-categorical feature '" + e.feature + "'");
    }
  }
}

nlohmann::json TransformSpec::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries_) {
    nlohmann::json j{{"feature", e.feature}};
    if (const auto* b = std::get_if<BucketSpec>(&e.op)) {
      j["kind"] = "bucket";
      j["boundaries"] = b->boundaries;
      j["policy"] = to_string(b->policy);
      if (!b->medians.empty()) j["medians"] = b->medians;
    } else if (const auto* m = std::get_if<MergeSpec>(&e.op)) {
      j["kind"] = "merge";
      nlohmann::json blocks = nlohmann::json::array();
      for (const auto& block : m->blocks) blocks.push_back({{"name", block.name}, {"members", block.members}});
      j["partition"] = std::move(blocks);
    } else {
      j["kind"] = "identity";
    }
    if (e.one_hot) j["one_hot"] = *e.one_hot;
    out.push_back(std::move(j));
  }
  return out;
}

TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
  TransformSpec spec;
  try {
    for (const auto& e : j) {
      TransformEntry entry;
      entry.feature = e.at("feature").get<std::string>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "bucket") {
        BucketSpec b;
        b.feature = entry.feature;
        b.boundaries = e.at("boundaries").get<std::vector<double>>();
        b.policy = representative_from_string(e.value("policy", std::string("median")));
        if (e.contains("medians")) b.medians = e.at("medians").get<std::vector<double>>();
        b.validate();
        entry.op = std::move(b);
      } else if (kind == "merge") {
        MergeSpec m;
        m.feature = entry.feature;
        for (const auto& block : e.at("partition")) {
          m.blocks.push_back({block.at("name").get<std::string>(), block.at("members").get<std::vector<std::string>>()});
        }
        entry.op = std::move(m);
      } else if (kind == "identity") {
        entry.op = IdentityTransform{};
      } else {
        throw ParseError("unknown transform kind '" + kind + "'");
      }
      if (e.contains("one_hot")) entry.one_hot = e.at("one_hot").get<bool>();
      spec.entries_.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed transform spec: ") + ex.what());
  }
  return spec;
}

TransformSpec TransformSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transform spec " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("transform spec " + path.string() + " is not valid JSON: " + e.what());
  }
}

void TransformSpec::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write transform spec " + path.string());
  out << to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------- groups

std::vector<std::size_t> GroupMap::members(std::size_t group) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < column_group.size(); ++c) {
    if (column_group[c] == group) out.push_back(c);
  }
  return out;
}

std::size_t GroupMap::index_of(const std::string& group) const {
  auto it = std::find(group_names.begin(), group_names.end(), group);
  if (it == group_names.end()) throw ArgumentError("unknown logical feature '" + group + "'");
  return static_cast<std::size_t>(it - group_names.begin());
}

GroupMap GroupMap::identity(const std::vector<std::string>& names) {
  GroupMap g;
  g.group_names = names;
  for (std::size_t i = 0; i < names.size(); ++i) g.column_group.push_back(i);
  return g;
}

// ---------------------------------------------------------------- pipeline

EncodedMatrix apply_pipeline(const Dataset& d, const TransformSpec& spec) {
  std::vector<std::size_t> rows(d.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return apply_pipeline(d, spec, rows);
}

EncodedMatrix apply_pipeline(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& rows) {
  const Schema& schema = d.schema();
  spec.validate(schema);

  EncodedMatrix out;
  out.spec = spec;
  std::vector<std::vector<double>> columns;  // column-major while building

  for (std::size_t f = 0; f < schema.size(); ++f) {
    const auto& desc = schema.feature(f);
    const std::size_t group = out.groups.group_names.size();
    out.groups.group_names.push_back(desc.name);
    const FeatureTransform* op = spec.find(desc.name);

    auto add_column = [&](std::string name, std::vector<double> values) {
      out.column_names.push_back(std::move(name));
      out.groups.column_group.push_back(group);
      columns.push_back(std::move(values));
    };

    if (!desc.is_categorical()) {
      std::vector<double> values = d.column(f, rows);
      if (op != nullptr) {
        if (const auto* b = std::get_if<BucketSpec>(op)) {
          auto result = bucketize(values, *b);
          out.clamped += result.clamped;
          values = std::move(result.values);
        }
      }
      add_column(desc.name, std::move(values));
      continue;
    }

    std::vector<std::string> tokens = d.tokens(f, rows);
    std::vector<std::string> categories = desc.categories;
    if (op != nullptr) {
      if (const auto* m = std::get_if<MergeSpec>(op)) {
        tokens = merge_categories(tokens, *m);
        categories = m->block_names();
      }
    }
    if (spec.one_hot(desc.name)) {
      auto encoded = one_hot(tokens, categories, desc.name);
      for (std::size_t c = 0; c < encoded.names.size(); ++c) {
        std::vector<double> values(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) values[r] = encoded.values(r, c);
        add_column(encoded.names[c], std::move(values));
      }
    } else {
      std::vector<double> codes(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        codes[r] = static_cast<double>(std::find(categories.begin(), categories.end(), tokens[r]) - categories.begin());
      }
      add_column(desc.name, std::move(codes));
    }
  }

  out.values = Matrix(rows.size(), columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) out.values(r, c) = columns[c][r];
  }
  return out;
}

}  // namespace shapsens
