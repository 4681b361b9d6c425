#include "xmanip/tabular.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/kv_config.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) {
      f.remove_suffix(1);
    }
  }
  return fields;
}

bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

ColumnRole parse_role(const std::string& key, const std::string& value) {
  if (value == "ordinary") return ColumnRole::kOrdinary;
  if (value == "sensitive") return ColumnRole::kSensitive;
  if (value == "uncorrelated") return ColumnRole::kUncorrelated;
  if (value == "outcome") return ColumnRole::kOutcome;
  throw Error(ErrorCode::kConfig, "key '" + key + "': unknown column role '" + value + "'");
}

// Population mean and standard deviation of each column.
std::pair<Vec, Vec> column_moments(const Mat& m) {
  const double n = static_cast<double>(m.rows());
  Vec mean = m.colwise().sum().transpose() / n;
  Vec sd(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double ss = (m.col(j).array() - mean(j)).square().sum();
    sd(j) = std::sqrt(ss / n);
  }
  return {mean, sd};
}

}  // namespace

std::string_view column_role_name(ColumnRole role) {
  switch (role) {
    case ColumnRole::kOrdinary: return "ordinary";
    case ColumnRole::kSensitive: return "sensitive";
    case ColumnRole::kUncorrelated: return "uncorrelated";
    case ColumnRole::kOutcome: return "outcome";
  }
  return "ordinary";
}

Schema Schema::parse(std::string_view text) {
  const KvConfig kv = KvConfig::parse(text);
  Schema schema;
  for (const auto& [key, value] : kv.values()) {
    if (key.rfind("column.", 0) == 0) {
      schema.roles[key.substr(7)] = parse_role(key, value);
    } else if (key == "protected.value") {
      schema.protected_value = kv.get_double(key);
    } else {
      throw Error(ErrorCode::kConfig, "unknown schema key '" + key + "'");
    }
  }
  const auto outcomes = std::count_if(schema.roles.begin(), schema.roles.end(),
                                      [](const auto& kv) { return kv.second == ColumnRole::kOutcome; });
  if (outcomes != 1) {
    throw Error(ErrorCode::kConfig, "schema must tag exactly one outcome column");
  }
  return schema;
}

Schema Schema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open schema " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Schema::to_string() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& [name, role] : roles) {
    out << "column." << name << " = " << column_role_name(role) << '\n';
  }
  out << "protected.value = " << protected_value << '\n';
  return out.str();
}

TabularDataset::TabularDataset(Mat features, Vec labels, std::vector<ColumnMeta> columns,
                               std::string outcome_name, std::vector<bool> protected_mask,
                               Vec means, Vec stds, bool standardized)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      columns_(std::move(columns)),
      outcome_name_(std::move(outcome_name)),
      protected_mask_(std::move(protected_mask)),
      means_(std::move(means)),
      stds_(std::move(stds)),
      standardized_(standardized) {
  const auto n = static_cast<std::size_t>(features_.rows());
  const auto d = static_cast<std::size_t>(features_.cols());
  if (n == 0 || d == 0) {
    throw Error(ErrorCode::kInvalidArgument, "dataset needs N >= 1 and d >= 1");
  }
  check_dim(static_cast<std::size_t>(labels_.size()), n, "labels");
  check_dim(columns_.size(), d, "column metadata");
  check_dim(static_cast<std::size_t>(means_.size()), d, "means");
  check_dim(static_cast<std::size_t>(stds_.size()), d, "stds");
  if (!protected_mask_.empty()) check_dim(protected_mask_.size(), n, "protected mask");
  for (Eigen::Index i = 0; i < labels_.size(); ++i) {
    if (labels_(i) != 0.0 && labels_(i) != 1.0) {
      throw Error(ErrorCode::kNonBinaryOutcome, "label of row " + std::to_string(i) + " is not 0/1");
    }
  }
  for (Eigen::Index j = 0; j < stds_.size(); ++j) {
    if (!(stds_(j) > 0.0)) {
      throw Error(ErrorCode::kZeroVariance, "column '" + columns_[j].name + "' has non-positive scale");
    }
  }
  for (const auto& c : columns_) {
    if (c.role == ColumnRole::kOutcome) {
      throw Error(ErrorCode::kInvalidArgument, "outcome column cannot be a feature");
    }
  }
}

std::optional<std::size_t> TabularDataset::sensitive_column() const {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].role == ColumnRole::kSensitive) return j;
  }
  return std::nullopt;
}

std::vector<std::size_t> TabularDataset::columns_with_role(ColumnRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].role == role) out.push_back(j);
  }
  return out;
}

std::optional<std::size_t> TabularDataset::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].name == name) return j;
  }
  return std::nullopt;
}

double TabularDataset::to_feature_units(std::size_t col, double original) const {
  const auto j = static_cast<Eigen::Index>(col);
  return (original - means_(j)) / stds_(j);
}

Mat TabularDataset::original_features() const {
  Mat out = features_;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = out.col(j).array() * stds_(j) + means_(j);
  }
  return out;
}

TabularDataset TabularDataset::subset(const IndexList& rows) const {
  Vec labels(static_cast<Eigen::Index>(rows.size()));
  std::vector<bool> mask;
  if (!protected_mask_.empty()) mask.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    labels(static_cast<Eigen::Index>(i)) = labels_(static_cast<Eigen::Index>(rows[i]));
    if (!protected_mask_.empty()) mask.push_back(protected_mask_[rows[i]]);
  }
  return TabularDataset(select_rows(features_, rows), labels, columns_, outcome_name_,
                        std::move(mask), means_, stds_, standardized_);
}

TabularDataset parse_csv(std::string_view text, const Schema& schema) {
  auto next_line = [&text]() -> std::optional<std::string_view> {
    while (!text.empty()) {
      const auto eol = text.find('\n');
      std::string_view line = text.substr(0, eol);
      text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty()) return line;
    }
    return std::nullopt;
  };

  const auto header_line = next_line();
  if (!header_line) throw Error(ErrorCode::kIo, "CSV has no header row");
  std::vector<std::string> header;
  for (auto f : split_fields(*header_line)) header.emplace_back(f);

  for (const auto& [name, role] : schema.roles) {
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw Error(ErrorCode::kMissingColumn,
                  "schema column '" + name + "' (" + std::string(column_role_name(role)) +
                      ") not found in CSV header");
    }
  }

  std::size_t outcome_pos = header.size();
  std::optional<std::size_t> sensitive_feature;
  std::vector<ColumnMeta> columns;
  std::vector<std::size_t> feature_pos;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto it = schema.roles.find(header[c]);
    const ColumnRole role = it == schema.roles.end() ? ColumnRole::kOrdinary : it->second;
    if (role == ColumnRole::kOutcome) {
      outcome_pos = c;
      continue;
    }
    if (role == ColumnRole::kSensitive && !sensitive_feature) sensitive_feature = columns.size();
    columns.push_back({header[c], role});
    feature_pos.push_back(c);
  }
  if (outcome_pos == header.size()) {
    throw Error(ErrorCode::kMissingColumn, "no outcome column in CSV");
  }

  std::vector<double> values;
  std::vector<double> labels;
  std::size_t row = 0;
  while (const auto line = next_line()) {
    const auto fields = split_fields(*line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kMalformedRow,
                  "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()),
                  static_cast<long>(row));
    }
    std::vector<double> parsed(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (!parse_number(fields[c], parsed[c])) {
        throw Error(ErrorCode::kMalformedRow,
                    "row " + std::to_string(row) + ", column '" + header[c] +
                        "': non-numeric cell '" + std::string(fields[c]) + "'",
                    static_cast<long>(row));
      }
    }
    const double y = parsed[outcome_pos];
    if (y != 0.0 && y != 1.0) {
      throw Error(ErrorCode::kNonBinaryOutcome,
                  "row " + std::to_string(row) + ": outcome value is not 0 or 1");
    }
    labels.push_back(y);
    for (const auto pos : feature_pos) values.push_back(parsed[pos]);
    ++row;
  }
  if (row == 0) throw Error(ErrorCode::kIo, "CSV has no data rows");

  const auto n = static_cast<Eigen::Index>(row);
  const auto d = static_cast<Eigen::Index>(columns.size());
  Mat features = Eigen::Map<const Mat>(values.data(), n, d);
  Vec y = Eigen::Map<const Vec>(labels.data(), n);

  std::vector<bool> mask;
  if (sensitive_feature) {
    mask.resize(row);
    for (Eigen::Index i = 0; i < n; ++i) {
      mask[static_cast<std::size_t>(i)] =
          features(i, static_cast<Eigen::Index>(*sensitive_feature)) == schema.protected_value;
    }
  }
  return TabularDataset(std::move(features), std::move(y), std::move(columns),
                        header[outcome_pos], std::move(mask), Vec::Zero(d), Vec::Ones(d), false);
}

TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open CSV " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema);
}

std::string to_csv(const TabularDataset& data) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& c : data.columns()) out << c.name << ',';
  out << data.outcome_name() << '\n';
  const Mat original = data.original_features();
  for (Eigen::Index i = 0; i < original.rows(); ++i) {
    for (Eigen::Index j = 0; j < original.cols(); ++j) out << original(i, j) << ',';
    out << static_cast<int>(data.labels()(i)) << '\n';
  }
  return out.str();
}

void write_csv(const TabularDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << to_csv(data);
}

Schema schema_of(const TabularDataset& data, double protected_value) {
  Schema schema;
  for (const auto& c : data.columns()) {
    if (c.role != ColumnRole::kOrdinary) schema.roles[c.name] = c.role;
  }
  schema.roles[data.outcome_name()] = ColumnRole::kOutcome;
  schema.protected_value = protected_value;
  return schema;
}

TabularDataset standardize(const TabularDataset& data, const TabularDataset& stats_source) {
  if (data.standardized() || stats_source.standardized()) {
    throw Error(ErrorCode::kInvalidArgument, "standardize expects datasets in original units");
  }
  check_dim(data.dim(), stats_source.dim(), "standardize");
  const auto [mean, sd] = column_moments(stats_source.features());
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (!(sd(j) > 0.0)) {
      throw Error(ErrorCode::kZeroVariance,
                  "column '" + stats_source.columns()[j].name + "' has zero variance");
    }
  }
  Mat z = data.features();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    z.col(j) = (z.col(j).array() - mean(j)) / sd(j);
  }
  return TabularDataset(std::move(z), data.labels(), data.columns(), data.outcome_name(),
                        data.protected_mask(), mean, sd, true);
}

std::pair<IndexList, IndexList> split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train_fraction must lie in (0, 1)");
  }
  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  // Fisher-Yates with our own index draws so the permutation does not depend
  // on the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  IndexList train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  IndexList test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {train, test};
}

std::pair<TabularDataset, TabularDataset> split(const TabularDataset& data, const SplitSpec& spec) {
  const auto [train, test] = split_indices(data.size(), spec);
  if (test.empty()) throw Error(ErrorCode::kInvalidArgument, "split leaves an empty test set");
  return {data.subset(train), data.subset(test)};
}

double pearson_correlation(const Vec& a, const Vec& b) {
  check_dim(static_cast<std::size_t>(b.size()), static_cast<std::size_t>(a.size()), "correlation");
  const double ma = a.mean();
  const double mb = b.mean();
  const Vec ca = a.array() - ma;
  const Vec cb = b.array() - mb;
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

AugmentedDataset augment_uncorrelated(const TabularDataset& data, int k, std::uint64_t seed) {
  if (k != 1 && k != 2) {
    throw Error(ErrorCode::kInvalidArgument, "augment_uncorrelated supports k = 1 or 2");
  }
  if (data.standardized()) {
    throw Error(ErrorCode::kInvalidArgument, "augment before standardizing");
  }
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.dim());
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);

  Mat features(n, d + k);
  features.leftCols(d) = data.features();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) features(i, d + c) = coin(rng) ? 1.0 : 0.0;
  }

  auto columns = data.columns();
  int suffix = 0;
  for (int c = 0; c < k; ++c) {
    std::string name;
    do {
      name = "unrelated_" + std::to_string(++suffix);
    } while (data.column_index(name));
    columns.push_back({name, ColumnRole::kUncorrelated});
  }

  Vec means(d + k);
  Vec stds(d + k);
  means << data.means(), Vec::Zero(k);
  stds << data.stds(), Vec::Ones(k);

  AugmentedDataset out{TabularDataset(features, data.labels(), std::move(columns),
                                      data.outcome_name(), data.protected_mask(), means, stds,
                                      false),
                       {},
                       0.0};
  if (const auto s = data.sensitive_column()) {
    const Vec sensitive = data.features().col(static_cast<Eigen::Index>(*s));
    for (int c = 0; c < k; ++c) {
      out.sensitive_correlation.push_back(
          std::abs(pearson_correlation(features.col(d + c), sensitive)));
    }
  }
  if (k == 2) {
    out.mutual_correlation = std::abs(pearson_correlation(features.col(d), features.col(d + 1)));
  }
  return out;
}

GroupMasks group_masks(const TabularDataset& data) {
  if (data.protected_mask().empty()) {
    throw Error(ErrorCode::kNoSensitiveColumn, "dataset has no sensitive column");
  }
  GroupMasks masks;
  masks.protected_rows = data.protected_mask();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool pos = data.labels()(static_cast<Eigen::Index>(i)) == 1.0;
    if (masks.protected_rows[i]) {
      (pos ? masks.protected_positive : masks.protected_negative).push_back(i);
    } else {
      (pos ? masks.nonprotected_positive : masks.nonprotected_negative).push_back(i);
    }
  }
  return masks;
}

TabularDataset drop_columns(const TabularDataset& data, ColumnRole role) {
  IndexList keep;
  for (std::size_t j = 0; j < data.dim(); ++j) {
    if (data.columns()[j].role != role) keep.push_back(j);
  }
  if (keep.empty()) throw Error(ErrorCode::kInvalidArgument, "no feature columns would remain");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(keep.size());
  Mat features(n, d);
  Vec means(d);
  Vec stds(d);
  std::vector<ColumnMeta> columns;
  for (Eigen::Index k = 0; k < d; ++k) {
    const auto j = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(k)]);
    features.col(k) = data.features().col(j);
    means(k) = data.means()(j);
    stds(k) = data.stds()(j);
    columns.push_back(data.columns()[static_cast<std::size_t>(j)]);
  }
  return TabularDataset(std::move(features), data.labels(), std::move(columns),
                        data.outcome_name(), data.protected_mask(), std::move(means),
                        std::move(stds), data.standardized());
}

}  // namespace xmanip
