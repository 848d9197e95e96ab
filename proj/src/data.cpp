#include "shapsens/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "shapsens/error.hpp"
#include "shapsens/random.hpp"

namespace shapsens {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kContinuous: return "continuous";
    case FeatureKind::kOrdinal: return "ordinal";
    case FeatureKind::kCategorical: return "categorical";
  }
  return "continuous";
}

FeatureKind feature_kind_from_string(const std::string& text) {
  if (text == "continuous") return FeatureKind::kContinuous;
  if (text == "ordinal") return FeatureKind::kOrdinal;
  if (text == "categorical") return FeatureKind::kCategorical;
  throw SchemaError("unknown feature kind '" + text + "'");
}

std::optional<std::size_t> FeatureDescriptor::category_index(const std::string& token) const {
  auto it = std::find(categories.begin(), categories.end(), token);
  if (it == categories.end()) return std::nullopt;
  return static_cast<std::size_t>(it - categories.begin());
}

// ---------------------------------------------------------------- Schema

Schema::Schema(std::vector<FeatureDescriptor> features, std::string target, std::string protected_feature)
    : features_(std::move(features)), target_(std::move(target)), protected_(std::move(protected_feature)) {
  validate();
}

void Schema::validate() const {
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.name.empty()) throw SchemaError("feature with empty name");
    if (!names.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
    if (f.is_categorical()) {
      if (f.categories.size() < 2) {
        throw SchemaError("categorical feature '" + f.name + "' needs at least 2 categories");
      }
      std::set<std::string> cats(f.categories.begin(), f.categories.end());
      if (cats.size() != f.categories.size()) {
        throw SchemaError("categorical feature '" + f.name + "' lists a category twice");
      }
    } else if (!f.categories.empty()) {
      throw SchemaError("non-categorical feature '" + f.name + "' lists categories");
    }
  }
  if (target_.empty()) throw SchemaError("schema has no target");
  if (names.count(target_)) throw SchemaError("target '" + target_ + "' is also listed as a feature");
  if (!names.count(protected_)) {
    throw SchemaError("protected feature '" + protected_ + "' is not among the features");
  }
}

const FeatureDescriptor& Schema::feature(const std::string& name) const { return features_[index_of(name)]; }

std::size_t Schema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  throw SchemaError("unknown feature '" + name + "'");
}

bool Schema::contains(const std::string& name) const {
  return std::any_of(features_.begin(), features_.end(), [&](const auto& f) { return f.name == name; });
}

Schema Schema::with_protected(const std::string& name) const { return Schema(features_, target_, name); }

nlohmann::json Schema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json entry{{"name", f.name}, {"kind", to_string(f.kind)}};
    if (f.is_categorical()) entry["categories"] = f.categories;
    features.push_back(std::move(entry));
  }
  return {{"features", std::move(features)}, {"target", target_}, {"protected", protected_}};
}

Schema Schema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureDescriptor> features;
    for (const auto& entry : j.at("features")) {
      FeatureDescriptor f;
      f.name = entry.at("name").get<std::string>();
      f.kind = feature_kind_from_string(entry.at("kind").get<std::string>());
      if (entry.contains("categories")) f.categories = entry.at("categories").get<std::vector<std::string>>();
      features.push_back(std::move(f));
    }
    return Schema(std::move(features), j.at("target").get<std::string>(), j.at("protected").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
}

Schema Schema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("schema file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void Schema::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file " + path.string());
  out << to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------- Dataset

Dataset::Dataset(Schema schema, std::vector<std::vector<double>> rows, std::vector<int> targets)
    : schema_(std::move(schema)), rows_(std::move(rows)), targets_(std::move(targets)) {
  validate();
}

void Dataset::validate() const {
  if (rows_.size() != targets_.size()) throw ArgumentError("row count and target count differ");
  const std::size_t width = schema_.size();
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    if (rows_[r].size() != width) {
      throw ArgumentError("row " + std::to_string(r) + " has " + std::to_string(rows_[r].size()) +
                          " values, schema has " + std::to_string(width) + " features");
    }
    for (std::size_t c = 0; c < width; ++c) {
      const double v = rows_[r][c];
      if (!std::isfinite(v)) throw DomainError("non-finite value at row " + std::to_string(r));
      const auto& f = schema_.feature(c);
      if (f.is_categorical()) {
        if (v < 0 || v != std::floor(v) || v >= static_cast<double>(f.categories.size())) {
          throw DomainError("row " + std::to_string(r) + ": category code out of range for '" + f.name + "'");
        }
      }
    }
    if (targets_[r] != 0 && targets_[r] != 1) {
      throw DomainError("row " + std::to_string(r) + ": target must be 0 or 1");
    }
  }
}

const std::string& Dataset::token(std::size_t row, std::size_t feature) const {
  const auto& f = schema_.feature(feature);
  if (!f.is_categorical()) throw ArgumentError("feature '" + f.name + "' is not categorical");
  return f.categories[static_cast<std::size_t>(value(row, feature))];
}

std::vector<double> Dataset::column(std::size_t feature) const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r.at(feature));
  return out;
}

std::vector<double> Dataset::column(std::size_t feature, const std::vector<std::size_t>& rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(value(r, feature));
  return out;
}

std::vector<std::string> Dataset::tokens(std::size_t feature, const std::vector<std::size_t>& rows) const {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(token(r, feature));
  return out;
}

Dataset Dataset::with_schema(Schema schema) const { return Dataset(std::move(schema), rows_, targets_); }

std::string Dataset::to_csv() const {
  std::ostringstream out;
  for (const auto& f : schema_.features()) out << f.name << ",";
  out << schema_.target() << "\n";
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      if (schema_.feature(c).is_categorical()) {
        out << token(r, c);
      } else {
        out << format_double(rows_[r][c]);
      }
      out << ",";
    }
    out << targets_[r] << "\n";
  }
  return out.str();
}

void Dataset::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv();
}

Dataset parse_csv(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_line(line);

  auto locate = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("CSV header is missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features()) feature_cols.push_back(locate(f.name));
  const std::size_t target_col = locate(schema.target());

  std::vector<std::vector<double>> rows;
  std::vector<int> targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    const std::size_t data_row = rows.size();
    auto where = [&](const std::string& column) {
      return "row " + std::to_string(data_row) + " (line " + std::to_string(line_no) + "), column '" + column + "'";
    };
    if (cells.size() != header.size()) {
      throw ParseError(where(schema.target()) + ": expected " + std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    std::vector<double> values;
    values.reserve(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto& f = schema.feature(c);
      const std::string& cell = cells[feature_cols[c]];
      if (cell.empty()) throw ParseError(where(f.name) + ": missing value");
      if (f.is_categorical()) {
        auto idx = f.category_index(cell);
        if (!idx) throw DomainError(where(f.name) + ": value '" + cell + "' is not a listed category");
        values.push_back(static_cast<double>(*idx));
      } else {
        auto v = parse_double(cell);
        if (!v) throw ParseError(where(f.name) + ": cannot parse '" + cell + "' as a number");
        values.push_back(*v);
      }
    }
    const std::string& tcell = cells[target_col];
    auto t = parse_double(tcell);
    if (!t || (*t != 0.0 && *t != 1.0)) {
      throw ParseError(where(schema.target()) + ": target '" + tcell + "' is not 0 or 1");
    }
    rows.push_back(std::move(values));
    targets.push_back(static_cast<int>(*t));
  }
  return Dataset(schema, std::move(rows), std::move(targets));
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CSV file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

// ---------------------------------------------------------------- synthetic

Schema synth_schema() {
  std::vector<FeatureDescriptor> features{
      {"age", FeatureKind::kContinuous, {}},
      {"race", FeatureKind::kCategorical, {"White", "Black", "Asian", "Other"}},
      {"education", FeatureKind::kOrdinal, {}},
      {"hours", FeatureKind::kContinuous, {}},
  };
  for (int i = 1; i <= 6; ++i) features.push_back({"noise" + std::to_string(i), FeatureKind::kContinuous, {}});
  return Schema(std::move(features), "label", "age");
}

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.rows == 0) throw ArgumentError("synthetic row count must be at least 1");
  Rng rng(seed);
  std::uniform_int_distribution<int> age_dist(17, 94);
  std::discrete_distribution<int> race_dist({0.6, 0.2, 0.1, 0.1});
  std::uniform_int_distribution<int> edu_dist(1, 16);
  std::uniform_int_distribution<int> hours_dist(5, 60);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> rows;
  std::vector<int> targets;
  rows.reserve(spec.rows);
  targets.reserve(spec.rows);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    const int age = age_dist(rng);
    const int race = race_dist(rng);
    const int education = edu_dist(rng);
    const int hours = hours_dist(rng);
    std::vector<double> row{double(age), double(race), double(education), double(hours)};
    for (int i = 0; i < 6; ++i) row.push_back(noise_dist(rng));

    double logit = 0.08 * (age - 45) - 1.2 * (age < 25 ? 1.0 : 0.0) + 0.9 * (race == 0 ? 1.0 : 0.0) -
                   0.7 * (race == 1 ? 1.0 : 0.0) + 0.15 * (education - 8) + 0.05 * (hours - 40);
    logit = std::clamp(logit, -6.0, 6.0);
    const double p = 1.0 / (1.0 + std::exp(-logit));
    targets.push_back(unit(rng) < p ? 1 : 0);
    rows.push_back(std::move(row));
  }
  return Dataset(synth_schema(), std::move(rows), std::move(targets));
}

// ---------------------------------------------------------------- splits

std::vector<FoldSplit> split_kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) {
    throw ArgumentError("fold count " + std::to_string(k) + " must lie in [2, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FoldSplit> folds(k);
  std::vector<int> fold_of(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold_of[order[pos++]] = static_cast<int>(f);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (static_cast<int>(f) == fold_of[i] ? folds[f].test : folds[f].train).push_back(i);
    }
  }
  return folds;
}

ConfusionPartition confusion_partition(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size()) {
    throw ArgumentError("predicted and actual label lists differ in length");
  }
  ConfusionPartition parts;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool a = actual[i] != 0;
    if (p && a) parts.true_positive.push_back(i);
    else if (p) parts.false_positive.push_back(i);
    else if (a) parts.false_negative.push_back(i);
    else parts.true_negative.push_back(i);
  }
  return parts;
}

}  // namespace shapsens
