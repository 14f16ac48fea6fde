#pragma once

#include <Eigen/Core>

namespace nlsd {

/// Row-major 64-bit dense matrix. Stalk features of node v occupy rows
/// [v*d, (v+1)*d) so that reshaping (n*d)xf <-> nx(d*f) never moves data.
using Dense = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using DenseMap = Eigen::Map<Dense>;
using ConstDenseMap = Eigen::Map<const Dense>;

inline bool all_finite(const Dense& m) { return m.allFinite(); }

}  // namespace nlsd
