#ifndef XMANIP_SYNTHETIC_H_
#define XMANIP_SYNTHETIC_H_

#include <cstdint>

#include "xmanip/tabular.h"

namespace xmanip {

// Criminal-history style data in original units. Columns:
//   race (sensitive, protected value 1), sex, age, priors_count,
//   juv_fel_count, juv_misd_count, juv_other_count, charge_degree
// and outcome two_year_recid. Count columns are zero-inflated and share
// latent propensities, so the rows sit on a thin, skewed manifold that
// N(x, I) draws leave.
TabularDataset make_compas_like(std::size_t n, std::uint64_t seed);

// Two features and a binary `group` column (sensitive, protected value 1)
// that is not meant to be a model input. Protected rows lie on a wide strip
// x2 = -offset + N(0, protected_spread^2) and non-protected rows on a thin
// band x2 = offset + N(0, band_width^2); on both, x1 ~ U(-extent, extent)
// and y ~ Bernoulli(sigmoid(label_slope * x1)) (label_slope <= 0 gives
// y = [x1 > 0]). A fraction `near_rate` of the non-protected rows instead
// sits on a second thin band at x2 = offset + near_gap, all labelled
// positive. Counterfactual searches from the non-protected band therefore
// have two basins: the far x1 boundary and the near band.
struct TwoBasinParams {
  double extent = 1.5;
  double label_slope = 4.0;
  double offset = 2.0;
  double band_width = 0.05;
  double protected_spread = 0.7;
  double group_rate = 0.5;
  double near_rate = 0.2;
  double near_gap = 0.6;
};
TabularDataset make_two_basin(std::size_t n, std::uint64_t seed,
                              const TwoBasinParams& params = {});

}  // namespace xmanip

#endif  // XMANIP_SYNTHETIC_H_
