#ifndef XMANIP_EXPERIMENTS_H_
#define XMANIP_EXPERIMENTS_H_

#include <cstdint>
#include <memory>
#include <vector>

#include "xmanip/lime.h"
#include "xmanip/metrics.h"
#include "xmanip/models.h"
#include "xmanip/recourse_attack.h"
#include "xmanip/tabular.h"

namespace xmanip {

// End-to-end scaffolding attack on LIME. The data must be in original
// units with a sensitive column.
struct LimeAttackConfig {
  double train_fraction = 0.8;
  // Perturbations drawn around each training row for the discriminator.
  std::size_t perturbations_per_row = 2;
  ForestParams forest;
  double discriminator_threshold = 0.5;
  LimeConfig lime;
  std::size_t top_k = 3;
  // Test rows explained per model; 0 explains all of them.
  std::size_t max_explained = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One scaffold built on data augmented with `uncorrelated` columns.
struct ScaffoldRun {
  int uncorrelated = 1;
  std::shared_ptr<const ScaffoldClassifier> scaffold;
  AttributionTable table;
  // Real-vs-perturbation accuracy on held-out rows and fresh draws.
  double discriminator_accuracy = 0.0;
  // Fraction of held-out real rows where scaffold and f agree at 0.5.
  double fidelity = 0.0;
};

struct PcaDiagnostic {
  PcaProjection projection;
  // Held-out accuracy of a depth-2 tree on the 2-D projection.
  double tree_accuracy = 0.0;
};

struct LimeAttackResult {
  AttributionTable biased;
  std::vector<ScaffoldRun> scaffolds;
  PcaDiagnostic pca;
};

// Builds f (1 iff the sensitive column is at the protected value), psi
// (one uncorrelated column, or XOR of two), the discriminator and the
// scaffold for one and for two uncorrelated columns, and audits all three
// models with LIME on held-out rows.
LimeAttackResult run_lime_attack(const TabularDataset& raw, const LimeAttackConfig& config);

// Real held-out rows against one N(x, I) draw around each of them,
// projected to two components; a depth-2 tree is fit on half the points and
// scored on the rest.
PcaDiagnostic pca_diagnostic(const Mat& real, std::uint64_t seed);

// Standardized train/test split with the sensitive column removed from the
// features; protected masks kept.
struct RecourseData {
  TabularDataset train;
  TabularDataset test;
};
RecourseData prepare_recourse_data(const TabularDataset& raw, double train_fraction,
                                   std::uint64_t seed);

struct RecourseExperimentConfig {
  double train_fraction = 0.8;
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t baseline_steps = 500;
  double baseline_learning_rate = 0.5;
  AttackConfig attack;
  DistanceSpec audit_distance;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RecourseExperimentResult {
  MlpModel baseline;
  RecourseAttackModel attack;
  RecourseReport report;
  AccuracyParity parity;
};

// Baseline by cross-entropy training, attack warm-started from it, then
// the four-algorithm audit and accuracy parity on the test split.
RecourseExperimentResult run_recourse_experiment(const TabularDataset& raw,
                                                 const RecourseExperimentConfig& config);

}  // namespace xmanip

#endif  // XMANIP_EXPERIMENTS_H_
