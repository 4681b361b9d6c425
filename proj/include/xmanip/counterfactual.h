#ifndef XMANIP_COUNTERFACTUAL_H_
#define XMANIP_COUNTERFACTUAL_H_

#include <cstdint>
#include <string>
#include <vector>

#include "xmanip/linalg.h"
#include "xmanip/models.h"

namespace xmanip {

enum class DistanceKind { kL1Mad, kL2, kElasticNet };

// Recourse distance d(x, x_cf).
//   L1Mad:      sum_j |x_j - xcf_j| / mad_j
//   L2:         |x - x_cf|_2^2
//   ElasticNet: beta |x - x_cf|_1 + |x - x_cf|_2^2
struct DistanceSpec {
  DistanceKind kind = DistanceKind::kL2;
  double beta = 1.0;
  Vec mad;

  static DistanceSpec l2() { return {}; }
  static DistanceSpec l1_mad(Vec mad);
  static DistanceSpec elastic_net(double beta);

  std::string name() const;
};

// Per-column median absolute deviation of `rows`; columns whose MAD is 0
// fall back to the column's standard deviation (then to 1).
Vec median_absolute_deviation(const Mat& rows);

double distance(const DistanceSpec& spec, const Vec& x, const Vec& x_cf);
// (Sub)gradient of d(x, x_cf) in x_cf; the L1 subgradient is 0 at kinks.
Vec distance_grad(const DistanceSpec& spec, const Vec& x, const Vec& x_cf);

struct CfConfig {
  double lambda_init = 0.1;
  double lambda_growth = 10.0;
  std::size_t max_lambda_rounds = 10;
  std::size_t inner_steps = 1000;
  double learning_rate = 0.01;
  double target_threshold = 0.5;
  // A round ends once an accepted step moves x_cf by less than this.
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  // Keep the per-step objective values in CounterfactualResult.
  bool record_objective = false;
  // Keep every accepted step in CounterfactualResult::path.
  bool record_path = false;

  void validate() const;
};

enum class CfAlgorithm { kWachter, kSparseWachter, kPrototype, kDice };

std::string cf_algorithm_name(CfAlgorithm algorithm);
CfAlgorithm parse_cf_algorithm(const std::string& name);

// Which hill-climbing variant to run. SparseWachter searches with the
// elastic-net distance of weight `sparsity_beta`; Prototype adds
// proto_weight * |x_cf - prototype|^2.
struct CfAlgorithmSpec {
  CfAlgorithm algorithm = CfAlgorithm::kWachter;
  double sparsity_beta = 1.0;
  double proto_weight = 0.1;
  Vec prototype;
  std::size_t diverse_count = 4;
  double diversity_weight = 0.1;

  static CfAlgorithmSpec wachter() { return {}; }
  static CfAlgorithmSpec sparse_wachter(double beta);
  static CfAlgorithmSpec prototype_guided(Vec prototype, double proto_weight);
  static CfAlgorithmSpec dice(std::size_t count, double diversity_weight);
};

struct CfRound {
  double lambda = 0.0;
  double cost = 0.0;
  double prob = 0.0;
  std::size_t steps = 0;
  // Objective after each accepted step (record_objective only); entry 0 is
  // the objective at the start of the round.
  std::vector<double> objective;
};

// One accepted descent step z_next = z - step * grad_z G(z) at `lambda`.
struct CfStep {
  Vec z;
  double step = 0.0;
  double lambda = 0.0;
};

struct CounterfactualResult {
  Vec x_cf;
  // d(start, x_cf) under the distance the search used.
  double cost = 0.0;
  double model_prob = 0.0;
  bool converged = false;
  // True when the start point was already positive and returned as is.
  bool already_positive = false;
  std::size_t rounds_used = 0;
  double final_lambda = 0.0;
  std::vector<CfRound> trace;
  std::vector<CfStep> path;
};

// G(x, x_cf) = lambda (f(x_cf) - 1)^2 + d(x, x_cf).
double objective_G(const Predictor& model, const DistanceSpec& spec, double lambda, const Vec& x,
                   const Vec& x_cf);

// The full hill-climbing objective for one candidate: objective_G with the
// search distance plus the optional prototype pull. Differentiable pieces
// needed by the search and by hypergradients.
class InnerObjective {
 public:
  InnerObjective(const DifferentiableModel& model, DistanceSpec distance, double lambda,
                 Vec anchor, double proto_weight = 0.0, Vec prototype = Vec());

  double value(const Vec& z) const;
  Vec grad(const Vec& z) const;
  // Hessian-vector product in z by central differences of grad(), step
  // 1e-4 * max(1, |z|).
  Vec hvp(const Vec& z, const Vec& v) const;
  // grad_theta [u^T grad_z G(z; theta)]: the transpose of the mixed
  // second derivative applied to u.
  Vec mixed_vjp(const Vec& z, const Vec& u) const;

  const DifferentiableModel& model() const { return model_; }
  const DistanceSpec& distance() const { return distance_; }
  double lambda() const { return lambda_; }
  const Vec& anchor() const { return anchor_; }

 private:
  const DifferentiableModel& model_;
  DistanceSpec distance_;
  double lambda_;
  Vec anchor_;
  double proto_weight_;
  Vec prototype_;
};

// Gradient descent on x_cf from x under the lambda schedule. Algorithms:
// Wachter, SparseWachter, Prototype (Dice is handled by find_diverse).
CounterfactualResult find_counterfactual(const DifferentiableModel& model, const Vec& x,
                                         const DistanceSpec& spec, const CfConfig& config,
                                         const CfAlgorithmSpec& algorithm = {});

// Joint descent on m candidates minimizing
//   sum_i G(x, c_i) - diversity_weight * logdet(K),
//   K_ij = 1 / (1 + d(c_i, c_j)) + 1e-6 [i = j].
// Candidates start at x (m = 1) or at x plus N(0, 0.01^2 I) noise drawn
// from config.seed. Results sorted by cost ascending.
std::vector<CounterfactualResult> find_diverse(const DifferentiableModel& model, const Vec& x,
                                               const DistanceSpec& spec, const CfConfig& config,
                                               std::size_t m, double diversity_weight);

// Runs `algorithm` and returns the single counterfactual to report; for
// Dice the lowest-cost converged candidate (or the lowest-cost one).
CounterfactualResult run_counterfactual(const DifferentiableModel& model, const Vec& x,
                                        const DistanceSpec& spec, const CfConfig& config,
                                        const CfAlgorithmSpec& algorithm);

// d(x, result.x_cf): x is the original instance even when the search was
// started from a shifted point.
double recourse_cost(const DistanceSpec& spec, const Vec& x, const CounterfactualResult& result);

}  // namespace xmanip

#endif  // XMANIP_COUNTERFACTUAL_H_
