#ifndef XMANIP_RECOURSE_ATTACK_H_
#define XMANIP_RECOURSE_ATTACK_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmanip/counterfactual.h"
#include "xmanip/linalg.h"
#include "xmanip/models.h"
#include "xmanip/tabular.h"

namespace xmanip {

struct AttackWeights {
  double fair = 1.0;
  double unfair = 1.0;
  double delta = 0.5;
  double acc = 2.0;
};

enum class HypergradMode { kImplicit, kUnrolled };

std::string hypergrad_mode_name(HypergradMode mode);
HypergradMode parse_hypergrad_mode(const std::string& name);

enum class DeltaInit { kRandom, kLowVariance };

std::string delta_init_name(DeltaInit init);
DeltaInit parse_delta_init(const std::string& name);

// Unit eigenvector of the smallest covariance eigenvalue of `rows`, signed
// so that its largest-magnitude entry is positive.
Vec low_variance_direction(const Mat& rows);

// Short Wachter schedule used for the searches inside training.
CfConfig training_cf_config();

struct AttackConfig {
  AttackWeights weights;
  std::size_t outer_steps = 200;
  double outer_learning_rate = 0.05;
  double delta_learning_rate = 0.05;
  HypergradMode hypergrad_mode = HypergradMode::kImplicit;
  // K for the unrolled mode and for the fallback when CG fails.
  std::size_t unroll_steps = 20;
  CfConfig cf_config = training_cf_config();
  DistanceSpec distance;
  // Instances drawn per step from each negative group; 0 uses the group.
  std::size_t batch_protected = 0;
  std::size_t batch_nonprotected = 0;
  // Initial delta is this scale times a unit vector: seeded random, or the
  // direction in which the non-protected negatives vary least. At delta = 0
  // the shifted and unshifted searches coincide and the delta gradient
  // carries no signal about other basins.
  double delta_init_scale = 0.1;
  DeltaInit delta_init = DeltaInit::kRandom;
  std::uint64_t seed = 0;

  void validate() const;
};

// Instances the adversarial loss is evaluated on.
struct AttackBatches {
  Mat protected_negative;
  Mat nonprotected_negative;
  Mat rows;
  Vec labels;
};

struct LossTerms {
  double fairness = 0.0;
  double unfairness = 0.0;
  double perturbation = 0.0;
  double accuracy = 0.0;
  double total = 0.0;
  double cost_protected = 0.0;
  double cost_nonprotected = 0.0;
  double cost_shifted = 0.0;
  // Inner searches that ended below the target threshold. Their last
  // iterate's cost is used.
  std::size_t not_converged = 0;
};

// total = w_fair (C_pr - C_np)^2 + w_unfair C_np_delta
//       + w_delta mean d(x, x + delta) + w_acc L.
LossTerms adversarial_loss(const MlpModel& model, const Vec& delta, const AttackBatches& batches,
                           const DistanceSpec& spec, const CfConfig& cf_config,
                           const AttackWeights& weights);

// Solves A u = b for symmetric positive-definite A given as a product.
// Throws CgNoConvergence on non-positive curvature or when the relative
// residual stays above `tolerance` after `max_iterations`.
Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply, const Vec& b,
                       double tolerance = 1e-6, std::size_t max_iterations = 500);

// Cost d(x, x_cf*) of a search started at `start` together with its
// derivatives in the model parameters and in the start point.
struct CostGradient {
  double cost = 0.0;
  Vec d_theta;
  Vec d_start;
  bool converged = false;
};

// Implicit differentiation at the search optimum: with u = H^{-1} grad d,
// dcost/dtheta = -(d grad_z G / d theta)^T u.
CostGradient cost_gradient_implicit(const DifferentiableModel& model, const Vec& x,
                                    const Vec& start, const CounterfactualResult& result,
                                    const DistanceSpec& spec);

// Re-runs the search from `start` and differentiates through its last K
// accepted steps; earlier iterates are constants.
CostGradient cost_gradient_unrolled(const DifferentiableModel& model, const Vec& x,
                                    const Vec& start, const DistanceSpec& spec,
                                    const CfConfig& cf_config, std::size_t k);

// dcost/dtheta for a converged search started at x.
Vec hypergrad_implicit(const DifferentiableModel& model, const Vec& x,
                       const CounterfactualResult& result, const DistanceSpec& spec);
Vec hypergrad_unrolled(const DifferentiableModel& model, const Vec& x, const DistanceSpec& spec,
                       const CfConfig& cf_config, std::size_t k);

struct AttackTraceRow {
  std::size_t step = 0;
  LossTerms terms;
  double delta_norm = 0.0;
  // Hypergradients that fell back from CG to unrolling.
  std::size_t cg_fallbacks = 0;
};

struct RecourseAttackModel {
  MlpModel model;
  Vec delta;
  std::vector<AttackTraceRow> trace;
};

// Alternating outer loop: a theta step on the full loss followed by a
// delta step on the unfair and perturbation terms with theta fixed.
// Deterministic given config.seed.
RecourseAttackModel train_attack(const TabularDataset& train, const GroupMasks& masks,
                                 const MlpModel& initial, const AttackConfig& config);

// Plain gradient descent on the cross-entropy only.
MlpModel train_classifier(const TabularDataset& train, const MlpModel& initial,
                          std::size_t steps, double learning_rate);

std::string trace_to_csv(const std::vector<AttackTraceRow>& trace);
std::string format_delta(const Vec& delta);
Vec parse_delta(std::string_view text);

}  // namespace xmanip

#endif  // XMANIP_RECOURSE_ATTACK_H_
