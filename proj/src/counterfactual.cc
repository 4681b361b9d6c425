#include "xmanip/counterfactual.h"

#include <algorithm>
#include <cmath>
#include <functional>

#include "xmanip/error.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

constexpr int kMaxHalvings = 20;

// One lambda round of backtracking gradient descent on `value`/`grad`.
// Accepts a step only when the objective does not increase.
struct RoundOutcome {
  std::size_t steps = 0;
  std::vector<double> objective;
};

RoundOutcome descend(Vec& z, const std::function<double(const Vec&)>& value,
                     const std::function<Vec(const Vec&)>& grad, const CfConfig& config,
                     double lambda, std::vector<CfStep>* path) {
  RoundOutcome out;
  double current = value(z);
  if (config.record_objective) out.objective.push_back(current);
  for (std::size_t step = 0; step < config.inner_steps; ++step) {
    const Vec g = grad(z);
    if (!g.allFinite()) throw Error(ErrorCode::kNonFinite, "non-finite counterfactual gradient");
    double rate = config.learning_rate;
    bool accepted = false;
    Vec candidate;
    double candidate_value = 0.0;
    for (int h = 0; h <= kMaxHalvings; ++h, rate *= 0.5) {
      candidate = z - rate * g;
      candidate_value = value(candidate);
      if (candidate_value <= current) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double moved = (candidate - z).norm();
    if (path != nullptr) path->push_back({z, rate, lambda});
    z = std::move(candidate);
    current = candidate_value;
    ++out.steps;
    if (config.record_objective) out.objective.push_back(current);
    if (moved < config.tolerance) break;
  }
  return out;
}

}  // namespace

DistanceSpec DistanceSpec::l1_mad(Vec mad) {
  if ((mad.array() <= 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "MAD entries must be positive");
  }
  DistanceSpec spec;
  spec.kind = DistanceKind::kL1Mad;
  spec.mad = std::move(mad);
  return spec;
}

DistanceSpec DistanceSpec::elastic_net(double beta) {
  if (!(beta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "elastic-net beta must be >= 0");
  DistanceSpec spec;
  spec.kind = DistanceKind::kElasticNet;
  spec.beta = beta;
  return spec;
}

std::string DistanceSpec::name() const {
  switch (kind) {
    case DistanceKind::kL1Mad: return "l1_mad";
    case DistanceKind::kL2: return "l2";
    case DistanceKind::kElasticNet: return "elastic_net";
  }
  return "l2";
}

Vec median_absolute_deviation(const Mat& rows) {
  if (rows.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "MAD of an empty matrix");
  auto median = [](std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
      m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    return m;
  };
  Vec mad(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) col[static_cast<std::size_t>(i)] = rows(i, j);
    const double med = median(col);
    for (auto& v : col) v = std::abs(v - med);
    double m = median(col);
    if (!(m > 0.0)) {
      const double mean = rows.col(j).mean();
      m = std::sqrt((rows.col(j).array() - mean).square().mean());
      if (!(m > 0.0)) m = 1.0;
    }
    mad(j) = m;
  }
  return mad;
}

double distance(const DistanceSpec& spec, const Vec& x, const Vec& x_cf) {
  check_dim(static_cast<std::size_t>(x_cf.size()), static_cast<std::size_t>(x.size()),
            "distance");
  const Vec diff = x_cf - x;
  switch (spec.kind) {
    case DistanceKind::kL1Mad:
      check_dim(static_cast<std::size_t>(spec.mad.size()), static_cast<std::size_t>(x.size()),
                "MAD vector");
      return (diff.array().abs() / spec.mad.array()).sum();
    case DistanceKind::kL2:
      return diff.squaredNorm();
    case DistanceKind::kElasticNet:
      return spec.beta * diff.lpNorm<1>() + diff.squaredNorm();
  }
  return 0.0;
}

Vec distance_grad(const DistanceSpec& spec, const Vec& x, const Vec& x_cf) {
  check_dim(static_cast<std::size_t>(x_cf.size()), static_cast<std::size_t>(x.size()),
            "distance");
  const Vec diff = x_cf - x;
  switch (spec.kind) {
    case DistanceKind::kL1Mad:
      check_dim(static_cast<std::size_t>(spec.mad.size()), static_cast<std::size_t>(x.size()),
                "MAD vector");
      return diff.unaryExpr(&sign0).array() / spec.mad.array();
    case DistanceKind::kL2:
      return 2.0 * diff;
    case DistanceKind::kElasticNet:
      return spec.beta * diff.unaryExpr(&sign0) + 2.0 * diff;
  }
  return Vec::Zero(x.size());
}

void CfConfig::validate() const {
  if (!(lambda_init > 0.0) || !(lambda_growth > 1.0) || max_lambda_rounds == 0 ||
      inner_steps == 0 || !(learning_rate > 0.0) || !(tolerance > 0.0) ||
      !(target_threshold > 0.0 && target_threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid counterfactual configuration");
  }
}

std::string cf_algorithm_name(CfAlgorithm algorithm) {
  switch (algorithm) {
    case CfAlgorithm::kWachter: return "wachter";
    case CfAlgorithm::kSparseWachter: return "sparse_wachter";
    case CfAlgorithm::kPrototype: return "prototype";
    case CfAlgorithm::kDice: return "dice";
  }
  return "wachter";
}

CfAlgorithm parse_cf_algorithm(const std::string& name) {
  if (name == "wachter") return CfAlgorithm::kWachter;
  if (name == "sparse_wachter") return CfAlgorithm::kSparseWachter;
  if (name == "prototype") return CfAlgorithm::kPrototype;
  if (name == "dice") return CfAlgorithm::kDice;
  throw Error(ErrorCode::kConfig, "unknown counterfactual algorithm '" + name + "'");
}

CfAlgorithmSpec CfAlgorithmSpec::sparse_wachter(double beta) {
  CfAlgorithmSpec spec;
  spec.algorithm = CfAlgorithm::kSparseWachter;
  spec.sparsity_beta = beta;
  return spec;
}

CfAlgorithmSpec CfAlgorithmSpec::prototype_guided(Vec prototype, double proto_weight) {
  CfAlgorithmSpec spec;
  spec.algorithm = CfAlgorithm::kPrototype;
  spec.prototype = std::move(prototype);
  spec.proto_weight = proto_weight;
  return spec;
}

CfAlgorithmSpec CfAlgorithmSpec::dice(std::size_t count, double diversity_weight) {
  CfAlgorithmSpec spec;
  spec.algorithm = CfAlgorithm::kDice;
  spec.diverse_count = count;
  spec.diversity_weight = diversity_weight;
  return spec;
}

double objective_G(const Predictor& model, const DistanceSpec& spec, double lambda, const Vec& x,
                   const Vec& x_cf) {
  const double f = model.predict(x_cf);
  return lambda * (f - 1.0) * (f - 1.0) + distance(spec, x, x_cf);
}

// ---------------------------------------------------------------------------
// InnerObjective

InnerObjective::InnerObjective(const DifferentiableModel& model, DistanceSpec distance,
                               double lambda, Vec anchor, double proto_weight, Vec prototype)
    : model_(model),
      distance_(std::move(distance)),
      lambda_(lambda),
      anchor_(std::move(anchor)),
      proto_weight_(proto_weight),
      prototype_(std::move(prototype)) {
  check_dim(static_cast<std::size_t>(anchor_.size()), model_.input_dim(), "counterfactual start");
  if (proto_weight_ != 0.0) {
    check_dim(static_cast<std::size_t>(prototype_.size()), model_.input_dim(), "prototype");
  }
}

double InnerObjective::value(const Vec& z) const {
  double g = objective_G(model_, distance_, lambda_, anchor_, z);
  if (proto_weight_ != 0.0) g += proto_weight_ * (z - prototype_).squaredNorm();
  return g;
}

Vec InnerObjective::grad(const Vec& z) const {
  const double f = model_.predict(z);
  Vec g = 2.0 * lambda_ * (f - 1.0) * model_.grad_input(z) + distance_grad(distance_, anchor_, z);
  if (proto_weight_ != 0.0) g += 2.0 * proto_weight_ * (z - prototype_);
  return g;
}

Vec InnerObjective::hvp(const Vec& z, const Vec& v) const {
  const double norm = v.norm();
  if (norm == 0.0) return Vec::Zero(z.size());
  const double h = 1e-4 * std::max(1.0, z.norm()) / norm;
  return (grad(z + h * v) - grad(z - h * v)) / (2.0 * h);
}

Vec InnerObjective::mixed_vjp(const Vec& z, const Vec& u) const {
  const double norm = u.norm();
  if (norm == 0.0) return Vec::Zero(static_cast<Eigen::Index>(model_.param_count()));
  const double f = model_.predict(z);
  const double directional = u.dot(model_.grad_input(z));
  const double h = 1e-4 * std::max(1.0, z.norm()) / norm;
  const Vec cross = (model_.grad_params(z + h * u) - model_.grad_params(z - h * u)) / (2.0 * h);
  return 2.0 * lambda_ * (directional * model_.grad_params(z) + (f - 1.0) * cross);
}

// ---------------------------------------------------------------------------
// Searches

CounterfactualResult find_counterfactual(const DifferentiableModel& model, const Vec& x,
                                         const DistanceSpec& spec, const CfConfig& config,
                                         const CfAlgorithmSpec& algorithm) {
  config.validate();
  check_dim(static_cast<std::size_t>(x.size()), model.input_dim(), "counterfactual instance");
  if (algorithm.algorithm == CfAlgorithm::kDice) {
    return run_counterfactual(model, x, spec, config, algorithm);
  }
  DistanceSpec search_distance = spec;
  double proto_weight = 0.0;
  Vec prototype;
  if (algorithm.algorithm == CfAlgorithm::kSparseWachter) {
    search_distance = DistanceSpec::elastic_net(algorithm.sparsity_beta);
  } else if (algorithm.algorithm == CfAlgorithm::kPrototype) {
    proto_weight = algorithm.proto_weight;
    prototype = algorithm.prototype;
  }

  CounterfactualResult result;
  result.x_cf = x;
  result.model_prob = model.predict(x);
  result.final_lambda = config.lambda_init;
  if (result.model_prob >= config.target_threshold) {
    result.converged = true;
    result.already_positive = true;
    return result;
  }

  Vec z = x;
  double lambda = config.lambda_init;
  for (std::size_t round = 0; round < config.max_lambda_rounds; ++round) {
    const InnerObjective objective(model, search_distance, lambda, x, proto_weight, prototype);
    RoundOutcome outcome = descend(
        z, [&](const Vec& v) { return objective.value(v); },
        [&](const Vec& v) { return objective.grad(v); }, config, lambda,
        config.record_path ? &result.path : nullptr);

    CfRound record;
    record.lambda = lambda;
    record.prob = model.predict(z);
    record.cost = distance(search_distance, x, z);
    record.steps = outcome.steps;
    record.objective = std::move(outcome.objective);
    result.trace.push_back(std::move(record));
    result.rounds_used = round + 1;
    result.final_lambda = lambda;

    if (result.trace.back().prob >= config.target_threshold) {
      result.converged = true;
      break;
    }
    lambda *= config.lambda_growth;
  }
  result.x_cf = z;
  result.model_prob = result.trace.back().prob;
  result.cost = result.trace.back().cost;
  return result;
}

std::vector<CounterfactualResult> find_diverse(const DifferentiableModel& model, const Vec& x,
                                               const DistanceSpec& spec, const CfConfig& config,
                                               std::size_t m, double diversity_weight) {
  config.validate();
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one candidate");
  if (!(diversity_weight >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "diversity weight must be >= 0");
  }
  const auto d = x.size();
  check_dim(static_cast<std::size_t>(d), model.input_dim(), "counterfactual instance");
  const auto mi = static_cast<Eigen::Index>(m);

  const double p0 = model.predict(x);
  if (p0 >= config.target_threshold) {
    CounterfactualResult r;
    r.x_cf = x;
    r.model_prob = p0;
    r.converged = true;
    r.already_positive = true;
    r.final_lambda = config.lambda_init;
    return std::vector<CounterfactualResult>(m, r);
  }

  // Stacked candidates: z = [c_0; c_1; ...].
  Vec z(mi * d);
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (Eigen::Index i = 0; i < mi; ++i) {
    z.segment(i * d, d) = x;
    if (m > 1) {
      for (Eigen::Index j = 0; j < d; ++j) z(i * d + j) += normal(rng);
    }
  }

  auto kernel = [&](const Vec& s) {
    Eigen::MatrixXd k(mi, mi);
    for (Eigen::Index i = 0; i < mi; ++i) {
      for (Eigen::Index j = 0; j < mi; ++j) {
        k(i, j) = 1.0 / (1.0 + distance(spec, s.segment(i * d, d), s.segment(j * d, d)));
      }
      k(i, i) += 1e-6;
    }
    return k;
  };
  auto logdet = [&](const Vec& s) {
    const Eigen::LLT<Eigen::MatrixXd> llt(kernel(s));
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  };

  double lambda = config.lambda_init;
  std::vector<CfRound> trace;
  bool all_positive = false;
  std::size_t rounds = 0;
  for (std::size_t round = 0; round < config.max_lambda_rounds; ++round) {
    const InnerObjective single(model, spec, lambda, x);
    auto value = [&](const Vec& s) {
      double total = 0.0;
      for (Eigen::Index i = 0; i < mi; ++i) total += single.value(s.segment(i * d, d));
      if (diversity_weight != 0.0 && m > 1) total -= diversity_weight * logdet(s);
      return total;
    };
    auto grad = [&](const Vec& s) {
      Vec g(mi * d);
      for (Eigen::Index i = 0; i < mi; ++i) g.segment(i * d, d) = single.grad(s.segment(i * d, d));
      if (diversity_weight != 0.0 && m > 1) {
        const Eigen::MatrixXd k = kernel(s);
        const Eigen::MatrixXd k_inv = k.ldlt().solve(Eigen::MatrixXd::Identity(mi, mi));
        for (Eigen::Index i = 0; i < mi; ++i) {
          for (Eigen::Index j = 0; j < mi; ++j) {
            if (i == j) continue;
            const Vec ci = s.segment(i * d, d);
            const Vec cj = s.segment(j * d, d);
            const double kij = 1.0 / (1.0 + distance(spec, ci, cj));
            // d logdet / d c_i through K_ij and K_ji.
            const Vec dk = -kij * kij * distance_grad(spec, cj, ci);
            g.segment(i * d, d) -= diversity_weight * 2.0 * k_inv(i, j) * dk;
          }
        }
      }
      return g;
    };
    RoundOutcome outcome = descend(z, value, grad, config, lambda, nullptr);

    CfRound record;
    record.lambda = lambda;
    record.steps = outcome.steps;
    record.objective = std::move(outcome.objective);
    double min_prob = 1.0;
    double total_cost = 0.0;
    for (Eigen::Index i = 0; i < mi; ++i) {
      min_prob = std::min(min_prob, model.predict(z.segment(i * d, d)));
      total_cost += distance(spec, x, z.segment(i * d, d));
    }
    record.prob = min_prob;
    record.cost = total_cost / static_cast<double>(m);
    trace.push_back(std::move(record));
    rounds = round + 1;
    if (min_prob >= config.target_threshold) {
      all_positive = true;
      break;
    }
    lambda *= config.lambda_growth;
  }
  (void)all_positive;

  std::vector<CounterfactualResult> results(m);
  for (Eigen::Index i = 0; i < mi; ++i) {
    auto& r = results[static_cast<std::size_t>(i)];
    r.x_cf = z.segment(i * d, d);
    r.model_prob = model.predict(r.x_cf);
    r.cost = distance(spec, x, r.x_cf);
    r.converged = r.model_prob >= config.target_threshold;
    r.rounds_used = rounds;
    r.final_lambda = trace.back().lambda;
    r.trace = trace;
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const auto& a, const auto& b) { return a.cost < b.cost; });
  return results;
}

CounterfactualResult run_counterfactual(const DifferentiableModel& model, const Vec& x,
                                        const DistanceSpec& spec, const CfConfig& config,
                                        const CfAlgorithmSpec& algorithm) {
  if (algorithm.algorithm != CfAlgorithm::kDice) {
    return find_counterfactual(model, x, spec, config, algorithm);
  }
  auto candidates =
      find_diverse(model, x, spec, config, algorithm.diverse_count, algorithm.diversity_weight);
  for (auto& c : candidates) {
    if (c.converged) return std::move(c);
  }
  return std::move(candidates.front());
}

double recourse_cost(const DistanceSpec& spec, const Vec& x, const CounterfactualResult& result) {
  return distance(spec, x, result.x_cf);
}

}  // namespace xmanip
