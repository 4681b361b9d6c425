#include "xmanip/recourse_attack.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "xmanip/error.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

// Curvature of the quadratic part of the distance: grad_z d(a, z) moves by
// -2c per unit move of a. The L1 parts are piecewise linear.
double quadratic_coefficient(const DistanceSpec& spec) {
  return spec.kind == DistanceKind::kL1Mad ? 0.0 : 1.0;
}

CfConfig with_path(CfConfig config) {
  config.record_path = true;
  return config;
}

CostGradient unrolled_from_result(const DifferentiableModel& model, const Vec& x,
                                  const Vec& start, const CounterfactualResult& result,
                                  const DistanceSpec& spec, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "unroll depth must be >= 1");
  const double c = quadratic_coefficient(spec);
  CostGradient out;
  out.cost = distance(spec, x, result.x_cf);
  out.converged = result.converged;
  out.d_theta = Vec::Zero(static_cast<Eigen::Index>(model.param_count()));
  out.d_start = Vec::Zero(x.size());

  Vec a = distance_grad(spec, x, result.x_cf);
  const std::size_t total = result.path.size();
  const std::size_t first = total > k ? total - k : 0;
  for (std::size_t s = total; s-- > first;) {
    const CfStep& step = result.path[s];
    const InnerObjective objective(model, spec, step.lambda, start);
    out.d_theta -= step.step * objective.mixed_vjp(step.z, a);
    out.d_start += 2.0 * c * step.step * a;
    a -= step.step * objective.hvp(step.z, a);
  }
  if (first == 0) out.d_start += a;
  return out;
}

IndexList draw_batch(const IndexList& group, std::size_t size, Rng& rng) {
  if (size == 0 || size >= group.size()) return group;
  IndexList pool = group;
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void require_finite(double v, const char* name, std::size_t step) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kNonFinite, std::string("attack step ") + std::to_string(step) +
                                           ": " + name + " is not finite");
  }
}

// Mean cost and gradients over a batch of searches.
struct BatchCost {
  double mean = 0.0;
  Vec d_theta;
  Vec d_start;  // summed start derivatives divided by batch size
  std::size_t not_converged = 0;
  std::size_t cg_fallbacks = 0;
};

BatchCost batch_cost(const MlpModel& model, const Mat& rows, const Vec& shift,
                     const DistanceSpec& spec, const AttackConfig& config, bool want_gradient) {
  BatchCost out;
  out.d_theta = Vec::Zero(static_cast<Eigen::Index>(model.param_count()));
  out.d_start = Vec::Zero(rows.cols());
  const CfConfig cf = with_path(config.cf_config);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Vec x = row_vec(rows, i);
    const Vec start = x + shift;
    const CounterfactualResult result = find_counterfactual(model, start, spec, cf);
    if (!result.converged) ++out.not_converged;
    if (!want_gradient) {
      out.mean += distance(spec, x, result.x_cf);
      continue;
    }
    CostGradient g;
    if (config.hypergrad_mode == HypergradMode::kImplicit && !result.converged) {
      // Cost only: the iterate is not a solution, and differentiating the
      // unfinished walk rewards models that stall the search.
      out.mean += distance(spec, x, result.x_cf);
      continue;
    }
    if (config.hypergrad_mode == HypergradMode::kImplicit) {
      try {
        g = cost_gradient_implicit(model, x, start, result, spec);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kCgNoConvergence) throw;
        ++out.cg_fallbacks;
        g = unrolled_from_result(model, x, start, result, spec, config.unroll_steps);
      }
    } else {
      g = unrolled_from_result(model, x, start, result, spec, config.unroll_steps);
    }
    out.mean += g.cost;
    out.d_theta += g.d_theta;
    out.d_start += g.d_start;
  }
  const double n = static_cast<double>(rows.rows());
  out.mean /= n;
  out.d_theta /= n;
  out.d_start /= n;
  return out;
}

double mean_shift_distance(const DistanceSpec& spec, const Mat& rows, const Vec& delta) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Vec x = row_vec(rows, i);
    total += distance(spec, x, x + delta);
  }
  return total / static_cast<double>(rows.rows());
}

Vec mean_shift_distance_grad(const DistanceSpec& spec, const Mat& rows, const Vec& delta) {
  Vec g = Vec::Zero(delta.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Vec x = row_vec(rows, i);
    g += distance_grad(spec, x, x + delta);
  }
  return g / static_cast<double>(rows.rows());
}

}  // namespace

std::string hypergrad_mode_name(HypergradMode mode) {
  return mode == HypergradMode::kImplicit ? "implicit" : "unrolled";
}

HypergradMode parse_hypergrad_mode(const std::string& name) {
  if (name == "implicit") return HypergradMode::kImplicit;
  if (name == "unrolled") return HypergradMode::kUnrolled;
  throw Error(ErrorCode::kConfig, "unknown hypergradient mode '" + name + "'");
}

std::string delta_init_name(DeltaInit init) {
  return init == DeltaInit::kLowVariance ? "low_variance" : "random";
}

DeltaInit parse_delta_init(const std::string& name) {
  if (name == "low_variance") return DeltaInit::kLowVariance;
  if (name == "random") return DeltaInit::kRandom;
  throw Error(ErrorCode::kConfig, "unknown delta init '" + name + "'");
}

Vec low_variance_direction(const Mat& rows) {
  if (rows.rows() < 2) throw Error(ErrorCode::kEmptyGroup, "need two rows for a covariance");
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Vec v = eig.eigenvectors().col(0);
  Eigen::Index largest = 0;
  v.cwiseAbs().maxCoeff(&largest);
  if (v(largest) < 0.0) v = -v;
  return v;
}

CfConfig training_cf_config() {
  CfConfig config;
  config.max_lambda_rounds = 3;
  config.inner_steps = 200;
  return config;
}

void AttackConfig::validate() const {
  const AttackWeights& w = weights;
  if (!(w.fair >= 0.0 && w.unfair >= 0.0 && w.delta >= 0.0 && w.acc >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "attack weights must be nonnegative");
  }
  if (w.fair + w.unfair + w.delta + w.acc <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "at least one attack weight must be positive");
  }
  if (unroll_steps == 0) throw Error(ErrorCode::kInvalidArgument, "unroll_steps must be >= 1");
  if (!(outer_learning_rate > 0.0) || !(delta_learning_rate >= 0.0) ||
      !(delta_init_scale >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid attack step sizes");
  }
  cf_config.validate();
}

LossTerms adversarial_loss(const MlpModel& model, const Vec& delta, const AttackBatches& batches,
                           const DistanceSpec& spec, const CfConfig& cf_config,
                           const AttackWeights& weights) {
  if (batches.protected_negative.rows() == 0 || batches.nonprotected_negative.rows() == 0) {
    throw Error(ErrorCode::kEmptyGroupBatch, "both negative-outcome batches must be non-empty");
  }
  check_dim(static_cast<std::size_t>(delta.size()), model.input_dim(), "delta");
  AttackConfig config;
  config.cf_config = cf_config;
  const Vec zero = Vec::Zero(delta.size());
  const BatchCost pr = batch_cost(model, batches.protected_negative, zero, spec, config, false);
  const BatchCost np = batch_cost(model, batches.nonprotected_negative, zero, spec, config, false);
  const BatchCost shifted =
      batch_cost(model, batches.nonprotected_negative, delta, spec, config, false);

  LossTerms t;
  t.cost_protected = pr.mean;
  t.cost_nonprotected = np.mean;
  t.cost_shifted = shifted.mean;
  t.not_converged = pr.not_converged + np.not_converged + shifted.not_converged;
  const double gap = pr.mean - np.mean;
  t.fairness = weights.fair * gap * gap;
  t.unfairness = weights.unfair * shifted.mean;
  t.perturbation = weights.delta * mean_shift_distance(spec, batches.nonprotected_negative, delta);
  t.accuracy = batches.rows.rows() > 0 ? weights.acc * model.loss(batches.rows, batches.labels) : 0.0;
  t.total = t.fairness + t.unfairness + t.perturbation + t.accuracy;
  return t;
}

Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply, const Vec& b,
                       double tolerance, std::size_t max_iterations) {
  Vec x = Vec::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) return x;
  Vec r = b;
  Vec p = r;
  double rr = r.squaredNorm();
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Vec ap = apply(p);
    const double curvature = p.dot(ap);
    if (!(curvature > 0.0)) {
      throw Error(ErrorCode::kCgNoConvergence, "non-positive curvature in conjugate gradient");
    }
    const double alpha = rr / curvature;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_next = r.squaredNorm();
    if (std::sqrt(rr_next) <= tolerance * b_norm) return x;
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  throw Error(ErrorCode::kCgNoConvergence, "conjugate gradient did not reach tolerance");
}

CostGradient cost_gradient_implicit(const DifferentiableModel& model, const Vec& x,
                                    const Vec& start, const CounterfactualResult& result,
                                    const DistanceSpec& spec) {
  if (!result.converged) {
    throw Error(ErrorCode::kNotConverged, "implicit hypergradient needs a converged search");
  }
  CostGradient out;
  out.cost = distance(spec, x, result.x_cf);
  out.converged = true;
  const Vec g = distance_grad(spec, x, result.x_cf);
  if (result.already_positive) {
    // x_cf is the start point itself while it stays positive.
    out.d_theta = Vec::Zero(static_cast<Eigen::Index>(model.param_count()));
    out.d_start = g;
    return out;
  }
  const InnerObjective objective(model, spec, result.final_lambda, start);
  const Vec u = conjugate_gradient([&](const Vec& v) { return objective.hvp(result.x_cf, v); }, g);
  out.d_theta = -objective.mixed_vjp(result.x_cf, u);
  out.d_start = 2.0 * quadratic_coefficient(spec) * u;
  return out;
}

CostGradient cost_gradient_unrolled(const DifferentiableModel& model, const Vec& x,
                                    const Vec& start, const DistanceSpec& spec,
                                    const CfConfig& cf_config, std::size_t k) {
  const CounterfactualResult result =
      find_counterfactual(model, start, spec, with_path(cf_config));
  return unrolled_from_result(model, x, start, result, spec, k);
}

Vec hypergrad_implicit(const DifferentiableModel& model, const Vec& x,
                       const CounterfactualResult& result, const DistanceSpec& spec) {
  return cost_gradient_implicit(model, x, x, result, spec).d_theta;
}

Vec hypergrad_unrolled(const DifferentiableModel& model, const Vec& x, const DistanceSpec& spec,
                       const CfConfig& cf_config, std::size_t k) {
  return cost_gradient_unrolled(model, x, x, spec, cf_config, k).d_theta;
}

RecourseAttackModel train_attack(const TabularDataset& train, const GroupMasks& masks,
                                 const MlpModel& initial, const AttackConfig& config) {
  config.validate();
  if (masks.protected_negative.empty() || masks.nonprotected_negative.empty()) {
    throw Error(ErrorCode::kEmptyGroupBatch,
                "both groups need negative-outcome instances for the attack");
  }
  check_dim(initial.input_dim(), train.dim(), "attack model input");
  const std::size_t d = train.dim();
  const Mat& rows = train.features();
  const Vec& labels = train.labels();
  const AttackWeights& w = config.weights;

  Rng rng(derive_seed(config.seed, stream::kAttack));
  Vec delta = Vec::Zero(static_cast<Eigen::Index>(d));
  if (config.delta_init_scale > 0.0) {
    if (config.delta_init == DeltaInit::kLowVariance) {
      delta = low_variance_direction(select_rows(rows, masks.nonprotected_negative));
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index j = 0; j < delta.size(); ++j) delta(j) = normal(rng);
    }
    delta *= config.delta_init_scale / delta.norm();
  }

  RecourseAttackModel out{initial, delta, {}};
  Vec theta = initial.params();
  const Vec zero = Vec::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t step = 0; step < config.outer_steps; ++step) {
    const MlpModel current(initial.layer_sizes(), initial.activation(), theta);
    const Mat pr = select_rows(rows, draw_batch(masks.protected_negative, config.batch_protected, rng));
    const Mat np =
        select_rows(rows, draw_batch(masks.nonprotected_negative, config.batch_nonprotected, rng));

    const bool need_fair = w.fair > 0.0;
    const BatchCost c_pr = batch_cost(current, pr, zero, config.distance, config, need_fair);
    const BatchCost c_np = batch_cost(current, np, zero, config.distance, config, need_fair);
    const BatchCost c_shift =
        batch_cost(current, np, delta, config.distance, config, w.unfair > 0.0);

    AttackTraceRow row;
    row.step = step;
    LossTerms& t = row.terms;
    t.cost_protected = c_pr.mean;
    t.cost_nonprotected = c_np.mean;
    t.cost_shifted = c_shift.mean;
    t.not_converged = c_pr.not_converged + c_np.not_converged + c_shift.not_converged;
    const double gap = c_pr.mean - c_np.mean;
    t.fairness = w.fair * gap * gap;
    t.unfairness = w.unfair * c_shift.mean;
    t.perturbation = w.delta * mean_shift_distance(config.distance, np, delta);
    t.accuracy = w.acc * current.loss(rows, labels);
    t.total = t.fairness + t.unfairness + t.perturbation + t.accuracy;
    require_finite(t.fairness, "fairness term", step);
    require_finite(t.unfairness, "unfairness term", step);
    require_finite(t.perturbation, "perturbation term", step);
    require_finite(t.accuracy, "accuracy term", step);
    row.cg_fallbacks = c_pr.cg_fallbacks + c_np.cg_fallbacks + c_shift.cg_fallbacks;

    // (1) theta step.
    Vec grad_theta = Vec::Zero(theta.size());
    if (w.acc > 0.0) grad_theta += w.acc * current.grad_loss(rows, labels);
    if (need_fair) grad_theta += w.fair * 2.0 * gap * (c_pr.d_theta - c_np.d_theta);
    if (w.unfair > 0.0) grad_theta += w.unfair * c_shift.d_theta;
    if (!grad_theta.allFinite()) {
      throw Error(ErrorCode::kNonFinite,
                  "attack step " + std::to_string(step) + ": parameter gradient is not finite");
    }
    theta -= config.outer_learning_rate * grad_theta;

    // (2) delta step with the updated theta held fixed.
    if (config.delta_learning_rate > 0.0 && (w.unfair > 0.0 || w.delta > 0.0)) {
      Vec grad_delta = w.delta * mean_shift_distance_grad(config.distance, np, delta);
      if (w.unfair > 0.0) {
        const MlpModel updated(initial.layer_sizes(), initial.activation(), theta);
        const BatchCost shifted = batch_cost(updated, np, delta, config.distance, config, true);
        grad_delta += w.unfair * shifted.d_start;
        row.cg_fallbacks += shifted.cg_fallbacks;
      }
      if (!grad_delta.allFinite()) {
        throw Error(ErrorCode::kNonFinite,
                    "attack step " + std::to_string(step) + ": delta gradient is not finite");
      }
      delta -= config.delta_learning_rate * grad_delta;
    }
    row.delta_norm = delta.norm();
    out.trace.push_back(row);
  }
  out.model = MlpModel(initial.layer_sizes(), initial.activation(), theta);
  out.delta = delta;
  return out;
}

MlpModel train_classifier(const TabularDataset& train, const MlpModel& initial,
                          std::size_t steps, double learning_rate) {
  check_dim(initial.input_dim(), train.dim(), "classifier input");
  Vec theta = initial.params();
  for (std::size_t s = 0; s < steps; ++s) {
    const MlpModel current(initial.layer_sizes(), initial.activation(), theta);
    const Vec g = current.grad_loss(train.features(), train.labels());
    if (!g.allFinite()) throw Error(ErrorCode::kNonFinite, "classifier gradient is not finite");
    theta -= learning_rate * g;
  }
  return MlpModel(initial.layer_sizes(), initial.activation(), theta);
}

std::string trace_to_csv(const std::vector<AttackTraceRow>& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "step,fairness,unfairness,perturbation,accuracy,total,cost_protected,"
         "cost_nonprotected,cost_shifted,not_converged,cg_fallbacks,delta_norm\n";
  for (const auto& r : trace) {
    const LossTerms& t = r.terms;
    out << r.step << ',' << t.fairness << ',' << t.unfairness << ',' << t.perturbation << ','
        << t.accuracy << ',' << t.total << ',' << t.cost_protected << ',' << t.cost_nonprotected
        << ',' << t.cost_shifted << ',' << t.not_converged << ',' << r.cg_fallbacks << ','
        << r.delta_norm << '\n';
  }
  return out.str();
}

std::string format_delta(const Vec& delta) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (Eigen::Index j = 0; j < delta.size(); ++j) out << delta(j) << '\n';
  return out.str();
}

Vec parse_delta(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
      throw Error(ErrorCode::kIo, "delta file: bad value '" + token + "'");
    }
    values.push_back(v);
  }
  if (values.empty()) throw Error(ErrorCode::kIo, "delta file is empty");
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace xmanip
