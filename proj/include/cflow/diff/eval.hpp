#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cflow/diff/array.hpp"
#include "cflow/diff/kernels.hpp"

namespace cflow::diff {

/// Non-recording counterpart of Tape with the same primitive interface.
/// Generic model code is written once against either; both share the forward
/// kernels, so values agree bitwise.
struct Eval {
  using Value = Array;

  Value constant(Array v) const { return v; }
  Value constant(double v) const { return Array::Constant(1, 1, v); }
  const Array& value(const Value& v) const { return v; }

  Value add(const Value& a, const Value& b) const { return kernels::add(a, b); }
  Value sub(const Value& a, const Value& b) const { return kernels::sub(a, b); }
  Value mul(const Value& a, const Value& b) const { return kernels::mul(a, b); }
  Value scale(const Value& a, double k) const { return k * a; }
  Value add_scalar(const Value& a, double k) const {
    return (a.array() + k).matrix();
  }
  Value matvec(const Value& m, const Value& x) const {
    if (m.cols() != x.rows()) throw std::invalid_argument("matvec: shape mismatch");
    return m * x;
  }
  // An empty `diag` means a unit diagonal.
  Value tri_matvec(const Value& strict, const Value& diag, const Value& x,
                   Triangle tri) const {
    return kernels::tri_matvec(strict, diag.size() ? &diag : nullptr, x, tri);
  }
  Value affine(const Array& weight, const Value& x, const Array& bias) const {
    if (weight.cols() != x.rows() || bias.rows() != weight.rows()) {
      throw std::invalid_argument("affine: shape mismatch");
    }
    return weight * x + bias;
  }
  Value concat(std::span<const Value> parts) const {
    std::vector<const Array*> ptrs;
    ptrs.reserve(parts.size());
    for (const Value& p : parts) ptrs.push_back(&p);
    return kernels::concat(ptrs);
  }
  Value slice(const Value& a, int offset, int length) const {
    if (offset < 0 || length < 0 || offset + length > a.rows()) {
      throw std::invalid_argument("slice: out of range");
    }
    return a.middleRows(offset, length);
  }
  Value row(const Value& a, int r) const { return a.row(r).transpose(); }
  Value exp(const Value& a) const { return a.array().exp().matrix(); }
  Value log(const Value& a) const { return a.array().log().matrix(); }
  Value sigmoid(const Value& a) const { return kernels::sigmoid(a); }
  Value softplus(const Value& a) const { return kernels::softplus(a); }
  Value tanh(const Value& a) const { return a.array().tanh().matrix(); }
  Value relu(const Value& a) const { return kernels::relu(a); }
  Value square(const Value& a) const { return a.array().square().matrix(); }
  Value softmax(const Value& a) const { return kernels::softmax_columns(a); }
  Value sum(const Value& a) const { return Array::Constant(1, 1, a.sum()); }
  Value gaussian_logpdf(const Value& x, const Value& mean,
                        const Value& scale) const {
    return Array::Constant(1, 1, kernels::gaussian_logpdf(x, mean, scale));
  }
};

}  // namespace cflow::diff
