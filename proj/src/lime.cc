#include "xmanip/lime.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmanip/error.h"
#include "xmanip/random.h"

namespace xmanip {

double LimeConfig::width_for(std::size_t d) const {
  return kernel_width > 0.0 ? kernel_width : 0.75 * std::sqrt(static_cast<double>(d));
}

Mat sample_perturbations(const Vec& x, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one perturbation");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat out(static_cast<Eigen::Index>(n), x.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = x(j) + normal(rng);
  }
  return out;
}

Vec kernel_weights(const Vec& x, const Mat& samples, double width) {
  if (!(width > 0.0)) throw Error(ErrorCode::kInvalidArgument, "kernel width must be positive");
  check_dim(static_cast<std::size_t>(samples.cols()), static_cast<std::size_t>(x.size()),
            "kernel samples");
  const double inv = 1.0 / (width * width);
  Vec w(samples.rows());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    w(i) = std::exp(-(samples.row(i).transpose() - x).squaredNorm() * inv);
  }
  return w;
}

RidgeFit fit_weighted_ridge(const Mat& samples, const Vec& targets, const Vec& weights,
                            double alpha) {
  const auto n = static_cast<std::size_t>(samples.rows());
  check_dim(static_cast<std::size_t>(targets.size()), n, "ridge targets");
  check_dim(static_cast<std::size_t>(weights.size()), n, "ridge weights");
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "ridge alpha must be >= 0");
  const double total = weights.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::kSingularSystem, "all sample weights are zero");

  // Centering at the weighted means leaves the intercept unpenalized.
  const Vec z_mean = samples.transpose() * weights / total;
  const double y_mean = weights.dot(targets) / total;
  const Mat centered = samples.rowwise() - z_mean.transpose();
  const Vec y_centered = targets.array() - y_mean;

  const Mat weighted = centered.array().colwise() * weights.array();
  Eigen::MatrixXd gram = centered.transpose() * weighted;
  gram.diagonal().array() += alpha;
  const Vec rhs = weighted.transpose() * y_centered;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const double scale = std::max(gram.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
    throw Error(ErrorCode::kSingularSystem, "weighted normal equations are singular");
  }
  RidgeFit fit;
  fit.coefficients = ldlt.solve(rhs);
  fit.intercept = y_mean - fit.coefficients.dot(z_mean);
  return fit;
}

std::vector<std::size_t> rank_features(const Vec& coefficients) {
  std::vector<std::size_t> order(static_cast<std::size_t>(coefficients.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(coefficients(static_cast<Eigen::Index>(a))) >
           std::abs(coefficients(static_cast<Eigen::Index>(b)));
  });
  return order;
}

LimeExplanation explain_instance(const Predictor& model, const Vec& x, const LimeConfig& config) {
  const auto d = static_cast<std::size_t>(x.size());
  check_dim(d, model.input_dim(), "explained instance");
  if (config.n_samples < d + 2) {
    throw Error(ErrorCode::kInvalidArgument, "LIME needs n_samples >= d + 2");
  }
  const Mat samples = sample_perturbations(x, config.n_samples, config.seed);
  const Vec targets = model.predict_batch(samples);
  const Vec weights = kernel_weights(x, samples, config.width_for(d));
  const RidgeFit fit = fit_weighted_ridge(samples, targets, weights, config.ridge_alpha);

  LimeExplanation out;
  out.intercept = fit.intercept;
  out.coefficients = fit.coefficients;
  out.ranked_features = rank_features(fit.coefficients);

  const Vec fitted = (samples * fit.coefficients).array() + fit.intercept;
  const double total = weights.sum();
  const double y_mean = weights.dot(targets) / total;
  const double ss_res = (weights.array() * (targets - fitted).array().square()).sum();
  const double ss_tot = (weights.array() * (targets.array() - y_mean).square()).sum();
  out.r2_local = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return out;
}

Vec topk_frequency(const std::vector<LimeExplanation>& explanations, std::size_t k) {
  if (explanations.empty()) throw Error(ErrorCode::kEmptyList, "no explanations to aggregate");
  const auto d = static_cast<std::size_t>(explanations.front().coefficients.size());
  if (k == 0 || k > d) throw Error(ErrorCode::kInvalidArgument, "k must lie in [1, d]");
  Vec counts = Vec::Zero(static_cast<Eigen::Index>(d));
  for (const auto& e : explanations) {
    check_dim(e.ranked_features.size(), d, "ranked features");
    for (std::size_t r = 0; r < k; ++r) counts(static_cast<Eigen::Index>(e.ranked_features[r])) += 1.0;
  }
  return counts / static_cast<double>(explanations.size());
}

EigenPairs power_iteration_deflation(const Mat& symmetric, std::size_t count, double tolerance,
                                     std::size_t max_iterations) {
  const auto d = symmetric.rows();
  if (symmetric.cols() != d) throw Error(ErrorCode::kDimensionMismatch, "matrix is not square");
  if (count > static_cast<std::size_t>(d)) {
    throw Error(ErrorCode::kInvalidArgument, "more components requested than dimensions");
  }
  Eigen::MatrixXd work = symmetric;
  const double scale = std::max(symmetric.norm(), 1e-300);

  EigenPairs out;
  out.values = Vec::Zero(static_cast<Eigen::Index>(count));
  out.vectors = Mat::Zero(static_cast<Eigen::Index>(count), d);

  Rng rng(derive_seed(0, stream::kPca));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto orthogonalize = [&](Vec& v, Eigen::Index found) {
    for (Eigen::Index p = 0; p < found; ++p) {
      const Vec prev = out.vectors.row(p).transpose();
      v -= prev.dot(v) * prev;
    }
  };

  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(count); ++c) {
    Vec v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = normal(rng);
    orthogonalize(v, c);
    v.normalize();

    double lambda = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      Vec w = work * v;
      orthogonalize(w, c);
      const double norm = w.norm();
      if (norm <= 1e-12 * scale) {
        // Remaining spectrum is numerically zero; any orthonormal
        // completion is an eigenvector.
        lambda = 0.0;
        converged = true;
        break;
      }
      v = w / norm;
      lambda = v.dot(work * v);
      const double residual = (work * v - lambda * v).norm();
      if (residual <= tolerance * scale) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw Error(ErrorCode::kConvergenceFailure,
                  "power iteration did not converge for component " + std::to_string(c));
    }
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    out.values(c) = lambda;
    out.vectors.row(c) = v.transpose();
    work -= lambda * v * v.transpose();
  }
  return out;
}

PcaProjection pca_project(const Mat& real, const Mat& perturbations, std::size_t n_components) {
  check_dim(static_cast<std::size_t>(perturbations.cols()), static_cast<std::size_t>(real.cols()),
            "PCA perturbation rows");
  const Eigen::Index n = real.rows() + perturbations.rows();
  if (n < static_cast<Eigen::Index>(std::max<std::size_t>(n_components, 2))) {
    throw Error(ErrorCode::kInvalidArgument, "too few rows for PCA");
  }
  Mat pooled(n, real.cols());
  pooled << real, perturbations;

  PcaProjection out;
  out.mean = pooled.colwise().mean().transpose();
  const Mat centered = pooled.rowwise() - out.mean.transpose();
  const Mat covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  const EigenPairs pairs = power_iteration_deflation(covariance, n_components);

  out.components = pairs.vectors;
  out.explained_variance = pairs.values;
  const double trace = covariance.trace();
  out.explained_variance_ratio =
      trace > 0.0 ? Vec(pairs.values / trace) : Vec::Zero(pairs.values.size());
  out.projected = centered * out.components.transpose();
  out.source.assign(static_cast<std::size_t>(real.rows()), 1);
  out.source.resize(static_cast<std::size_t>(n), 0);
  return out;
}

DiscriminatorData discriminator_training_data(const Mat& real, std::size_t per_row,
                                              std::uint64_t seed) {
  if (real.rows() == 0) throw Error(ErrorCode::kEmptyClass, "no real rows");
  if (per_row == 0) throw Error(ErrorCode::kInvalidArgument, "per_row must be >= 1");
  DiscriminatorData out;
  out.real = real;
  out.fake.resize(real.rows() * static_cast<Eigen::Index>(per_row), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    const Mat draws = sample_perturbations(row_vec(real, i), per_row,
                                           derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.fake.middleRows(i * static_cast<Eigen::Index>(per_row), draws.rows()) = draws;
  }
  return out;
}

}  // namespace xmanip
