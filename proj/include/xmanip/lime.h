#ifndef XMANIP_LIME_H_
#define XMANIP_LIME_H_

#include <cstdint>
#include <vector>

#include "xmanip/linalg.h"
#include "xmanip/models.h"

namespace xmanip {

struct LimeConfig {
  std::size_t n_samples = 5000;
  // <= 0 selects the default 0.75 * sqrt(d).
  double kernel_width = 0.0;
  double ridge_alpha = 1.0;
  std::uint64_t seed = 0;

  double width_for(std::size_t d) const;
};

struct LimeExplanation {
  double intercept = 0.0;
  Vec coefficients;
  // Columns by |coefficient| descending, ties by ascending column index.
  std::vector<std::size_t> ranked_features;
  // Weighted R^2 of the local surrogate on its own samples.
  double r2_local = 0.0;
};

// n rows drawn i.i.d. from N(x, I).
Mat sample_perturbations(const Vec& x, std::size_t n, std::uint64_t seed);

// w_i = exp(-|x - z_i|^2 / width^2).
Vec kernel_weights(const Vec& x, const Mat& samples, double width);

struct RidgeFit {
  double intercept = 0.0;
  Vec coefficients;
};

// Minimizes sum_i w_i (y_i - b0 - b^T z_i)^2 + alpha |b|^2 with the
// intercept unpenalized. Throws SingularSystem when alpha = 0 and the
// weighted design is rank deficient.
RidgeFit fit_weighted_ridge(const Mat& samples, const Vec& targets, const Vec& weights,
                            double alpha);

std::vector<std::size_t> rank_features(const Vec& coefficients);

LimeExplanation explain_instance(const Predictor& model, const Vec& x, const LimeConfig& config);

// Fraction of explanations whose top-k ranked features contain each column.
Vec topk_frequency(const std::vector<LimeExplanation>& explanations, std::size_t k);

struct PcaProjection {
  // n_components x d, orthonormal rows.
  Mat components;
  Vec explained_variance;
  Vec explained_variance_ratio;
  Vec mean;
  // Rows of real followed by rows of perturbations.
  Mat projected;
  // 1 for real rows, 0 for perturbation rows.
  std::vector<int> source;
};

// Principal components of the pooled rows by power iteration with
// deflation (residual tolerance 1e-10, at most 10000 iterations each).
PcaProjection pca_project(const Mat& real, const Mat& perturbations,
                          std::size_t n_components = 2);

// Top eigenpairs of a symmetric PSD matrix; exposed for testing.
struct EigenPairs {
  Vec values;
  Mat vectors;  // one eigenvector per row
};
EigenPairs power_iteration_deflation(const Mat& symmetric, std::size_t count,
                                     double tolerance = 1e-10,
                                     std::size_t max_iterations = 10000);

// Training rows for the scaffold's discriminator: the real rows and
// `per_row` draws from N(x, I) around each of them.
struct DiscriminatorData {
  Mat real;
  Mat fake;
};
DiscriminatorData discriminator_training_data(const Mat& real, std::size_t per_row,
                                              std::uint64_t seed);

}  // namespace xmanip

#endif  // XMANIP_LIME_H_
