#ifndef XMANIP_TABULAR_H_
#define XMANIP_TABULAR_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xmanip/linalg.h"

namespace xmanip {

enum class ColumnRole { kOrdinary, kSensitive, kUncorrelated, kOutcome };

std::string_view column_role_name(ColumnRole role);

struct ColumnMeta {
  std::string name;
  ColumnRole role = ColumnRole::kOrdinary;
};

// Column roles plus the protected value of the sensitive column.
//
// Text form (flat key-value):
//   column.race = sensitive
//   column.y = outcome
//   protected.value = 1
// Columns not mentioned are ordinary features.
struct Schema {
  std::map<std::string, ColumnRole> roles;
  double protected_value = 1.0;

  static Schema parse(std::string_view text);
  static Schema load(const std::filesystem::path& path);
  std::string to_string() const;
};

// Feature matrix (N x d), binary labels, per-column metadata and the
// per-column affine transform mapping original units to feature units.
// For a dataset that has not been standardized the transform is the
// identity (means 0, stds 1).
//
// Immutable after construction.
class TabularDataset {
 public:
  TabularDataset(Mat features, Vec labels, std::vector<ColumnMeta> columns,
                 std::string outcome_name, std::vector<bool> protected_mask,
                 Vec means, Vec stds, bool standardized);

  const Mat& features() const { return features_; }
  const Vec& labels() const { return labels_; }
  const std::vector<ColumnMeta>& columns() const { return columns_; }
  const std::string& outcome_name() const { return outcome_name_; }
  // protected_mask()[i] is true iff the sensitive column of row i equals the
  // configured protected value. Empty when no sensitive column exists.
  const std::vector<bool>& protected_mask() const { return protected_mask_; }
  const Vec& means() const { return means_; }
  const Vec& stds() const { return stds_; }
  bool standardized() const { return standardized_; }

  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }

  std::optional<std::size_t> sensitive_column() const;
  std::vector<std::size_t> columns_with_role(ColumnRole role) const;
  std::optional<std::size_t> column_index(const std::string& name) const;

  // Maps a value given in original units of column `col` to feature units.
  double to_feature_units(std::size_t col, double original) const;
  // Features mapped back to original units.
  Mat original_features() const;

  TabularDataset subset(const IndexList& rows) const;

 private:
  Mat features_;
  Vec labels_;
  std::vector<ColumnMeta> columns_;
  std::string outcome_name_;
  std::vector<bool> protected_mask_;
  Vec means_;
  Vec stds_;
  bool standardized_;
};

struct GroupMasks {
  std::vector<bool> protected_rows;
  IndexList protected_positive;
  IndexList protected_negative;
  IndexList nonprotected_positive;
  IndexList nonprotected_negative;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Parses a CSV with a header row. Rows with a non-numeric cell raise
// MalformedRow carrying the 0-based data row index.
TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema);
TabularDataset parse_csv(std::string_view text, const Schema& schema);

// Writes the dataset in original units with the outcome as last column.
void write_csv(const TabularDataset& data, const std::filesystem::path& path);
std::string to_csv(const TabularDataset& data);
// Schema matching `data`'s column roles.
Schema schema_of(const TabularDataset& data, double protected_value);

// (x - mean) / std per column with statistics from `stats_source`, which
// must be in original units. Population standard deviation.
TabularDataset standardize(const TabularDataset& data,
                           const TabularDataset& stats_source);

// Deterministic shuffled split; returns (train indices, test indices).
std::pair<IndexList, IndexList> split_indices(std::size_t n, const SplitSpec& spec);
std::pair<TabularDataset, TabularDataset> split(const TabularDataset& data,
                                                const SplitSpec& spec);

struct AugmentedDataset {
  TabularDataset dataset;
  // |Pearson correlation| of each new column with the sensitive column.
  std::vector<double> sensitive_correlation;
  // |correlation| between the two new columns; 0 when k = 1.
  double mutual_correlation = 0.0;
};

// Appends k in {1, 2} Bernoulli(1/2) columns tagged uncorrelated, sampled
// independently of every existing column. Requires original units.
AugmentedDataset augment_uncorrelated(const TabularDataset& data, int k,
                                      std::uint64_t seed);

// Requires a protected mask, which is kept by drop_columns.
GroupMasks group_masks(const TabularDataset& data);

// Removes every column with `role` from the features; labels and the
// protected mask are kept. Used when the protected attribute must not be a
// model input.
TabularDataset drop_columns(const TabularDataset& data, ColumnRole role);

double pearson_correlation(const Vec& a, const Vec& b);

}  // namespace xmanip

#endif  // XMANIP_TABULAR_H_
