#pragma once

#include <Eigen/Dense>

namespace motg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace motg
