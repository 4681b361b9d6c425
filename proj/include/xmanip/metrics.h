#ifndef XMANIP_METRICS_H_
#define XMANIP_METRICS_H_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmanip/counterfactual.h"
#include "xmanip/lime.h"
#include "xmanip/models.h"
#include "xmanip/tabular.h"

namespace xmanip {

// Mean recourse cost over the converged searches of one group.
struct RecourseCell {
  double mean_cost = 0.0;
  std::size_t count = 0;
  std::size_t converged = 0;
  double convergence_rate = 0.0;
};

struct RecourseRow {
  CfAlgorithm algorithm = CfAlgorithm::kWachter;
  RecourseCell protected_group;
  RecourseCell nonprotected;
  RecourseCell nonprotected_shifted;
  // |protected - nonprotected|.
  double disparity = 0.0;
  // nonprotected / nonprotected_shifted.
  double cost_reduction = 0.0;
};

struct RecourseReport {
  std::string distance;
  std::vector<RecourseRow> rows;
};

// One audited algorithm and the schedule its searches use.
struct AuditAlgorithm {
  CfAlgorithmSpec spec;
  CfConfig config;
};

// The four hill-climbing algorithms with the default schedule. The
// prototype is the mean of the positive rows of `reference`.
std::vector<AuditAlgorithm> default_audit_algorithms(const TabularDataset& reference,
                                                     std::uint64_t seed);

// Runs every algorithm on D_pr^neg, D_np^neg and {x + delta : x in D_np^neg}.
// Costs are d(x, x_cf) under `spec` from the original x. Throws EmptyGroup
// when a negative group is empty or a cell has no converged search.
RecourseReport recourse_audit(const DifferentiableModel& model, const Vec& delta,
                              const TabularDataset& data, const GroupMasks& masks,
                              const DistanceSpec& spec,
                              const std::vector<AuditAlgorithm>& algorithms);

// 0/1 accuracy at threshold 0.5.
double accuracy(const Predictor& model, const Mat& rows, const Vec& labels);

struct AccuracyParity {
  double model = 0.0;
  double baseline = 0.0;
  // baseline - model.
  double gap = 0.0;
};
AccuracyParity accuracy_parity(const Predictor& model, const Predictor& baseline,
                               const TabularDataset& test);

// Per-column LIME top-k frequencies of one model over `rows`. Instance i is
// explained with seed derive_seed(lime.seed, i).
struct AttributionTable {
  std::string label;
  std::vector<std::string> columns;
  Vec topk;
  Vec top1;
  double mean_r2 = 0.0;
};
AttributionTable attribution_frequencies(const Predictor& model, const Mat& rows,
                                         const std::vector<std::string>& columns,
                                         const LimeConfig& lime, std::size_t k,
                                         std::string label);

nlohmann::json to_json(const RecourseReport& report);
nlohmann::json to_json(const AccuracyParity& parity);
nlohmann::json to_json(const AttributionTable& table, std::size_t k);

// Aligned-column text tables.
std::string format_table(const RecourseReport& report);
std::string format_table(const std::vector<AttributionTable>& tables, std::size_t k);

// Whitespace-separated plot data: one row per column of each table.
std::string plot_data(const std::vector<AttributionTable>& tables);

}  // namespace xmanip

#endif  // XMANIP_METRICS_H_
