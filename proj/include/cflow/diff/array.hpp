#pragma once

#include <Eigen/Dense>

namespace cflow::diff {

/// Every value on the tape is a dense 64-bit array. Vectors are n x 1.
using Array = Eigen::MatrixXd;

enum class Triangle { Upper, Lower };

/// Number of strictly-triangular entries of an n x n matrix.
constexpr int strict_count(int n) { return n * (n - 1) / 2; }

}  // namespace cflow::diff
