#ifndef XMANIP_LINALG_H_
#define XMANIP_LINALG_H_

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace xmanip {

using Vec = Eigen::VectorXd;
// Row-major so that each instance is a contiguous row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::vector<std::size_t>;

// Gathers the given rows of `m` in order.
inline Mat select_rows(const Mat& m, const IndexList& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

inline Vec row_vec(const Mat& m, Eigen::Index i) { return m.row(i).transpose(); }

}  // namespace xmanip

#endif  // XMANIP_LINALG_H_
