#include "xmanip/metrics.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

RecourseCell audit_cell(const DifferentiableModel& model, const Mat& rows, const Vec& shift,
                        const DistanceSpec& spec, const AuditAlgorithm& algorithm,
                        const std::string& what) {
  RecourseCell cell;
  cell.count = static_cast<std::size_t>(rows.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Vec x = rows.row(i).transpose();
    CfConfig config = algorithm.config;
    config.seed = derive_seed(algorithm.config.seed, static_cast<std::uint64_t>(i));
    const CounterfactualResult result =
        run_counterfactual(model, x + shift, spec, config, algorithm.spec);
    if (!result.converged) continue;
    ++cell.converged;
    total += recourse_cost(spec, x, result);
  }
  if (cell.converged == 0) {
    throw Error(ErrorCode::kEmptyGroup, "no converged " +
                                            cf_algorithm_name(algorithm.spec.algorithm) +
                                            " search for " + what);
  }
  cell.mean_cost = total / static_cast<double>(cell.converged);
  cell.convergence_rate = static_cast<double>(cell.converged) / static_cast<double>(cell.count);
  return cell;
}

std::string fixed(double v, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

// Left-aligned first column, right-aligned others.
std::string render(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) out << "  ";
      if (j == 0) {
        out << std::left << std::setw(static_cast<int>(width[j])) << row[j];
      } else {
        out << std::right << std::setw(static_cast<int>(width[j])) << row[j];
      }
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json cell_json(const RecourseCell& cell) {
  return {{"mean_cost", cell.mean_cost},
          {"count", cell.count},
          {"converged", cell.converged},
          {"convergence_rate", cell.convergence_rate}};
}

}  // namespace

std::vector<AuditAlgorithm> default_audit_algorithms(const TabularDataset& reference,
                                                     std::uint64_t seed) {
  const GroupMasks masks = group_masks(reference);
  IndexList positives = masks.protected_positive;
  positives.insert(positives.end(), masks.nonprotected_positive.begin(),
                   masks.nonprotected_positive.end());
  if (positives.empty()) throw Error(ErrorCode::kEmptyClass, "no positive rows for prototype");
  const Vec prototype = select_rows(reference.features(), positives).colwise().mean().transpose();

  CfConfig config;
  config.seed = seed;
  return {{CfAlgorithmSpec::wachter(), config},
          {CfAlgorithmSpec::sparse_wachter(1.0), config},
          {CfAlgorithmSpec::prototype_guided(prototype, 0.1), config},
          {CfAlgorithmSpec::dice(4, 0.1), config}};
}

RecourseReport recourse_audit(const DifferentiableModel& model, const Vec& delta,
                              const TabularDataset& data, const GroupMasks& masks,
                              const DistanceSpec& spec,
                              const std::vector<AuditAlgorithm>& algorithms) {
  if (masks.protected_negative.empty() || masks.nonprotected_negative.empty()) {
    throw Error(ErrorCode::kEmptyGroup, "both groups need negative-outcome rows");
  }
  check_dim(static_cast<std::size_t>(delta.size()), data.dim(), "delta");
  const Mat protected_rows = select_rows(data.features(), masks.protected_negative);
  const Mat nonprotected_rows = select_rows(data.features(), masks.nonprotected_negative);
  const Vec zero = Vec::Zero(delta.size());
  const bool no_shift = (delta.array() == 0.0).all();

  RecourseReport report;
  report.distance = spec.name();
  for (const AuditAlgorithm& algorithm : algorithms) {
    algorithm.config.validate();
    RecourseRow row;
    row.algorithm = algorithm.spec.algorithm;
    row.protected_group = audit_cell(model, protected_rows, zero, spec, algorithm, "protected");
    row.nonprotected = audit_cell(model, nonprotected_rows, zero, spec, algorithm, "non-protected");
    row.nonprotected_shifted =
        no_shift ? row.nonprotected
                 : audit_cell(model, nonprotected_rows, delta, spec, algorithm, "shifted");
    row.disparity = std::abs(row.protected_group.mean_cost - row.nonprotected.mean_cost);
    if (row.nonprotected.mean_cost == row.nonprotected_shifted.mean_cost) {
      row.cost_reduction = 1.0;
    } else {
      row.cost_reduction = row.nonprotected.mean_cost / row.nonprotected_shifted.mean_cost;
    }
    report.rows.push_back(row);
  }
  return report;
}

double accuracy(const Predictor& model, const Mat& rows, const Vec& labels) {
  check_dim(static_cast<std::size_t>(labels.size()), static_cast<std::size_t>(rows.rows()),
            "labels");
  if (rows.rows() == 0) throw Error(ErrorCode::kEmptyList, "no rows to score");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double predicted = model.predict(rows.row(i).transpose()) >= 0.5 ? 1.0 : 0.0;
    if (predicted == labels(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.rows());
}

AccuracyParity accuracy_parity(const Predictor& model, const Predictor& baseline,
                               const TabularDataset& test) {
  AccuracyParity parity;
  parity.model = accuracy(model, test.features(), test.labels());
  parity.baseline = accuracy(baseline, test.features(), test.labels());
  parity.gap = parity.baseline - parity.model;
  return parity;
}

AttributionTable attribution_frequencies(const Predictor& model, const Mat& rows,
                                         const std::vector<std::string>& columns,
                                         const LimeConfig& lime, std::size_t k,
                                         std::string label) {
  if (rows.rows() == 0) throw Error(ErrorCode::kEmptyList, "no rows to explain");
  check_dim(columns.size(), static_cast<std::size_t>(rows.cols()), "column names");
  std::vector<LimeExplanation> explanations;
  explanations.reserve(static_cast<std::size_t>(rows.rows()));
  double r2 = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    LimeConfig config = lime;
    config.seed = derive_seed(lime.seed, static_cast<std::uint64_t>(i));
    explanations.push_back(explain_instance(model, rows.row(i).transpose(), config));
    r2 += explanations.back().r2_local;
  }
  AttributionTable table;
  table.label = std::move(label);
  table.columns = columns;
  table.topk = topk_frequency(explanations, k);
  table.top1 = topk_frequency(explanations, 1);
  table.mean_r2 = r2 / static_cast<double>(rows.rows());
  return table;
}

nlohmann::json to_json(const RecourseReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const RecourseRow& row : report.rows) {
    rows.push_back({{"algorithm", cf_algorithm_name(row.algorithm)},
                    {"protected", cell_json(row.protected_group)},
                    {"nonprotected", cell_json(row.nonprotected)},
                    {"nonprotected_shifted", cell_json(row.nonprotected_shifted)},
                    {"disparity", row.disparity},
                    {"cost_reduction", row.cost_reduction}});
  }
  return {{"distance", report.distance}, {"rows", rows}};
}

nlohmann::json to_json(const AccuracyParity& parity) {
  return {{"accuracy_model", parity.model},
          {"accuracy_baseline", parity.baseline},
          {"gap", parity.gap}};
}

nlohmann::json to_json(const AttributionTable& table, std::size_t k) {
  nlohmann::json columns = nlohmann::json::array();
  for (std::size_t j = 0; j < table.columns.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    columns.push_back(
        {{"column", table.columns[j]}, {"topk", table.topk(jj)}, {"top1", table.top1(jj)}});
  }
  return {{"model", table.label}, {"k", k}, {"mean_r2", table.mean_r2}, {"columns", columns}};
}

std::string format_table(const RecourseReport& report) {
  std::vector<std::vector<std::string>> cells = {
      {"algorithm", "cost_pr", "cost_np", "disparity", "cost_np+delta", "reduction", "conv_pr",
       "conv_np", "conv_np+delta"}};
  for (const RecourseRow& row : report.rows) {
    cells.push_back({cf_algorithm_name(row.algorithm), fixed(row.protected_group.mean_cost, 4),
                     fixed(row.nonprotected.mean_cost, 4), fixed(row.disparity, 4),
                     fixed(row.nonprotected_shifted.mean_cost, 4),
                     fixed(row.cost_reduction, 2) + "x",
                     fixed(row.protected_group.convergence_rate, 3),
                     fixed(row.nonprotected.convergence_rate, 3),
                     fixed(row.nonprotected_shifted.convergence_rate, 3)});
  }
  return "distance: " + report.distance + "\n" + render(cells);
}

std::string format_table(const std::vector<AttributionTable>& tables, std::size_t k) {
  if (tables.empty()) return "";
  std::vector<std::vector<std::string>> cells = {{"column"}};
  for (const AttributionTable& table : tables) {
    cells[0].push_back(table.label + "_top" + std::to_string(k));
    cells[0].push_back(table.label + "_top1");
  }
  // Tables may cover different column sets; union in first-seen order.
  std::vector<std::string> names;
  for (const AttributionTable& table : tables) {
    for (const std::string& name : table.columns) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  }
  for (const std::string& name : names) {
    std::vector<std::string> row = {name};
    for (const AttributionTable& table : tables) {
      const auto it = std::find(table.columns.begin(), table.columns.end(), name);
      if (it == table.columns.end()) {
        row.insert(row.end(), {"-", "-"});
        continue;
      }
      const auto j = static_cast<Eigen::Index>(it - table.columns.begin());
      row.push_back(fixed(table.topk(j), 3));
      row.push_back(fixed(table.top1(j), 3));
    }
    cells.push_back(std::move(row));
  }
  return render(cells);
}

std::string plot_data(const std::vector<AttributionTable>& tables) {
  std::ostringstream out;
  out << "# model column topk top1\n" << std::setprecision(17);
  for (const AttributionTable& table : tables) {
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out << table.label << ' ' << table.columns[j] << ' ' << table.topk(jj) << ' '
          << table.top1(jj) << '\n';
    }
  }
  return out.str();
}

}  // namespace xmanip
