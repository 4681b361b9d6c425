#include "xmanip/synthetic.h"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "xmanip/error.h"
#include "xmanip/random.h"

namespace xmanip {
namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TabularDataset assemble(std::vector<std::string> names, std::size_t sensitive, Mat features,
                        Vec labels, std::string outcome) {
  std::vector<ColumnMeta> columns;
  for (std::size_t j = 0; j < names.size(); ++j) {
    columns.push_back({names[j], j == sensitive ? ColumnRole::kSensitive : ColumnRole::kOrdinary});
  }
  const auto n = static_cast<std::size_t>(features.rows());
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(sensitive)) == 1.0;
  }
  const auto d = features.cols();
  return TabularDataset(std::move(features), std::move(labels), std::move(columns),
                        std::move(outcome), std::move(mask), Vec::Zero(d), Vec::Ones(d), false);
}

}  // namespace

TabularDataset make_compas_like(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two rows");
  Rng rng(derive_seed(seed, stream::kSynthetic));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::gamma_distribution<double> age_gamma(2.0, 6.0);
  std::gamma_distribution<double> history_gamma(1.5, 1.0);
  std::gamma_distribution<double> juvenile_gamma(2.0, 1.0);

  Mat x(static_cast<Eigen::Index>(n), 8);
  Vec y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double race = unit(rng) < 0.5 ? 1.0 : 0.0;
    const double sex = unit(rng) < 0.8 ? 1.0 : 0.0;
    const double age = 18.0 + age_gamma(rng);
    const double history = (unit(rng) < 0.4 ? 0.0 : history_gamma(rng)) * (1.0 + 0.3 * race);
    const double juvenile = unit(rng) < 0.95 ? 0.0 : juvenile_gamma(rng);
    const double priors = std::poisson_distribution<int>(4.0 * history + juvenile)(rng);
    double counts[3];
    for (double& c : counts) {
      c = juvenile > 0.0 ? std::poisson_distribution<int>(3.0 * juvenile)(rng) : 0.0;
    }
    const double felony = unit(rng) < sigmoid(history - 1.0) ? 1.0 : 0.0;
    x.row(i) << race, sex, age, priors, counts[0], counts[1], counts[2], felony;
    const double risk = -1.0 + 0.25 * priors - 0.04 * (age - 30.0) + 0.3 * felony + 0.2 * sex;
    y(i) = unit(rng) < sigmoid(risk) ? 1.0 : 0.0;
  }
  return assemble({"race", "sex", "age", "priors_count", "juv_fel_count", "juv_misd_count",
                   "juv_other_count", "charge_degree"},
                  0, std::move(x), std::move(y), "two_year_recid");
}

TabularDataset make_two_basin(std::size_t n, std::uint64_t seed, const TwoBasinParams& params) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two rows");
  Rng rng(derive_seed(seed, stream::kSynthetic));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> position(-params.extent, params.extent);
  std::normal_distribution<double> band(0.0, params.band_width);
  std::normal_distribution<double> strip(0.0, params.protected_spread);

  Mat x(static_cast<Eigen::Index>(n), 3);
  Vec y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double group = unit(rng) < params.group_rate ? 1.0 : 0.0;
    const double t = position(rng);
    if (group == 0.0 && unit(rng) < params.near_rate) {
      x.row(i) << t, params.offset + params.near_gap + band(rng), group;
      y(i) = 1.0;
      continue;
    }
    const double x2 = group == 1.0 ? -params.offset + strip(rng) : params.offset + band(rng);
    const double p = params.label_slope > 0.0 ? sigmoid(params.label_slope * t) : (t > 0.0 ? 1.0 : 0.0);
    y(i) = unit(rng) < p ? 1.0 : 0.0;
    x.row(i) << t, x2, group;
  }
  return assemble({"x1", "x2", "group"}, 2, std::move(x), std::move(y), "y");
}

}  // namespace xmanip
