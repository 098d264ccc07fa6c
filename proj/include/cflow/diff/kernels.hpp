#pragma once

// Forward kernels shared by the recording tape and the plain evaluator, so
// both produce bitwise-identical values for the same inputs.

#include <span>

#include "cflow/diff/array.hpp"

namespace cflow::diff::kernels {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

double sigmoid(double x);
double softplus(double x);

// Elementwise binary ops. Shapes must agree, or one operand is 1 x 1 and is
// broadcast.
Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);

Array sigmoid(const Array& a);
Array softplus(const Array& a);
Array relu(const Array& a);
Array softmax_columns(const Array& a);

// y = T x where T has the packed strict triangle `strict` (row-major over the
// strict entries) and diagonal `diag`, or a unit diagonal when diag is null.
Array tri_matvec(const Array& strict, const Array* diag, const Array& x,
                 Triangle tri);

// Sum over entries of the diagonal Gaussian log density.
double gaussian_logpdf(const Array& x, const Array& mean, const Array& scale);

Array concat(std::span<const Array* const> parts);

}  // namespace cflow::diff::kernels
