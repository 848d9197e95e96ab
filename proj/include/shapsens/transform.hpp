#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "shapsens/data.hpp"
#include "shapsens/matrix.hpp"

namespace shapsens {

// ---------------------------------------------------------------- buckets

// Value that stands in for every observation of a bucket.
enum class Representative { kIndex, kMedian, kMidpoint };

std::string to_string(Representative policy);
Representative representative_from_string(const std::string& text);

// Boundaries b_0 < b_1 < ... < b_k define k buckets. Bucket j holds
// b_j <= v < b_{j+1}; the last bucket is closed above. Values outside
// [b_0, b_k] fall into the nearest terminal bucket.
struct BucketSpec {
  std::string feature;
  std::vector<double> boundaries;
  Representative policy = Representative::kMedian;
  // Per-bucket training medians, frozen at construction (median policy only).
  std::vector<double> medians;

  std::size_t bucket_count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  std::size_t bucket_of(double v) const;
  double representative(std::size_t bucket) const;
  void validate() const;

  bool operator==(const BucketSpec&) const = default;
};

// Builds a spec and, for the median policy, freezes per-bucket medians of
// `training_values`. A bucket without training values uses its midpoint.
BucketSpec make_bucket_spec(std::string feature, std::vector<double> boundaries, Representative policy,
                            const std::vector<double>& training_values = {});

std::vector<double> equi_width_boundaries(double lo, double hi, std::size_t k);

// Boundaries at the j/k lower nearest-rank quantiles of `values` (the
// order statistic of 0-based rank floor(j*n/k)), deduplicated. May return
// fewer than k buckets when values repeat.
std::vector<double> equi_depth_boundaries(std::vector<double> values, std::size_t k);

struct BucketizeResult {
  std::vector<double> values;
  std::size_t clamped = 0;  // inputs outside [b_0, b_k]
};

BucketizeResult bucketize(const std::vector<double>& values, const BucketSpec& spec);

// ---------------------------------------------------------------- merges

struct MergeBlock {
  std::string name;
  std::vector<std::string> members;

  bool operator==(const MergeBlock&) const = default;
};

// Partition of a categorical feature's categories into named blocks.
struct MergeSpec {
  std::string feature;
  std::vector<MergeBlock> blocks;

  // Blocks named by joining member names with '+'.
  static MergeSpec from_groups(std::string feature, const std::vector<std::vector<std::string>>& groups);
  // One block per category.
  static MergeSpec identity(std::string feature, const std::vector<std::string>& categories);

  std::vector<std::string> block_names() const;
  std::optional<std::size_t> block_of(const std::string& token) const;
  // "White+Black, Asian+Other"
  std::string label() const;
  // Throws unless blocks are nonempty, disjoint and cover `categories`.
  void validate(const std::vector<std::string>& categories) const;

  bool operator==(const MergeSpec&) const = default;
};

std::vector<std::string> merge_categories(const std::vector<std::string>& tokens, const MergeSpec& spec);

struct OneHotColumns {
  std::vector<std::string> names;  // "<feature>=<category>"
  Matrix values;                   // rows x categories, 0/1
};

OneHotColumns one_hot(const std::vector<std::string>& tokens, const std::vector<std::string>& categories,
                      const std::string& feature = "");

// ---------------------------------------------------------------- pipeline

struct IdentityTransform {
  bool operator==(const IdentityTransform&) const = default;
};

using FeatureTransform = std::variant<IdentityTransform, BucketSpec, MergeSpec>;

struct TransformEntry {
  std::string feature;
  FeatureTransform op;
  std::optional<bool> one_hot;  // categorical only; unset means enabled

  bool operator==(const TransformEntry&) const = default;
};

// Declarative per-feature representation. Features without an entry pass
// through unchanged; categorical features are one-hot encoded unless their
// flag is cleared, in which case they become a single code column.
class TransformSpec {
 public:
  void set(const std::string& feature, FeatureTransform op);
  void set(BucketSpec spec);
  void set(MergeSpec spec);
  void set_one_hot(const std::string& feature, bool enabled);

  const FeatureTransform* find(const std::string& feature) const;
  bool one_hot(const std::string& feature) const;

  const std::vector<TransformEntry>& entries() const { return entries_; }

  void validate(const Schema& schema) const;

  // Top-level JSON array of {feature, kind, boundaries?, policy?, medians?,
  // partition?, one_hot?} entries.
  nlohmann::json to_json() const;
  static TransformSpec from_json(const nlohmann::json& j);
  static TransformSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const TransformSpec&) const = default;

 private:
  TransformEntry& entry(const std::string& feature);

  std::vector<TransformEntry> entries_;
};

// Column -> logical feature map of an encoded matrix.
struct GroupMap {
  std::vector<std::size_t> column_group;  // per column: index into group_names
  std::vector<std::string> group_names;   // logical features, schema order

  std::size_t columns() const { return column_group.size(); }
  std::size_t groups() const { return group_names.size(); }
  std::vector<std::size_t> members(std::size_t group) const;
  std::size_t index_of(const std::string& group) const;
  static GroupMap identity(const std::vector<std::string>& names);

  bool operator==(const GroupMap&) const = default;
};

struct EncodedMatrix {
  Matrix values;
  std::vector<std::string> column_names;
  GroupMap groups;
  TransformSpec spec;
  std::size_t clamped = 0;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
};

EncodedMatrix apply_pipeline(const Dataset& d, const TransformSpec& spec);
// Encodes only the listed rows, in order.
EncodedMatrix apply_pipeline(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& rows);

}  // namespace shapsens
