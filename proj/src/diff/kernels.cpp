#include "cflow/diff/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace cflow::diff::kernels {

namespace {

bool is_scalar(const Array& a) { return a.rows() == 1 && a.cols() == 1; }

void check_broadcast(const Array& a, const Array& b, const char* op) {
  if ((a.rows() == b.rows() && a.cols() == b.cols()) || is_scalar(a) ||
      is_scalar(b)) {
    return;
  }
  throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Array add(const Array& a, const Array& b) {
  check_broadcast(a, b, "add");
  if (a.size() == b.size()) return a + b;
  if (is_scalar(a)) return (b.array() + a(0, 0)).matrix();
  return (a.array() + b(0, 0)).matrix();
}

Array sub(const Array& a, const Array& b) {
  check_broadcast(a, b, "sub");
  if (a.size() == b.size()) return a - b;
  if (is_scalar(a)) return (a(0, 0) - b.array()).matrix();
  return (a.array() - b(0, 0)).matrix();
}

Array mul(const Array& a, const Array& b) {
  check_broadcast(a, b, "mul");
  if (a.size() == b.size()) return a.cwiseProduct(b);
  if (is_scalar(a)) return a(0, 0) * b;
  return a * b(0, 0);
}

Array sigmoid(const Array& a) {
  return a.unaryExpr([](double v) { return sigmoid(v); });
}

Array softplus(const Array& a) {
  return a.unaryExpr([](double v) { return softplus(v); });
}

Array relu(const Array& a) { return a.cwiseMax(0.0); }

Array softmax_columns(const Array& a) {
  Array out(a.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double top = a.col(c).maxCoeff();
    out.col(c) = (a.col(c).array() - top).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

Array tri_matvec(const Array& strict, const Array* diag, const Array& x,
                 Triangle tri) {
  const Eigen::Index n = x.rows();
  if (x.cols() != 1 || strict.size() != strict_count(static_cast<int>(n)) ||
      (diag != nullptr && diag->size() != n)) {
    throw std::invalid_argument("tri_matvec: shape mismatch");
  }
  Array y(n, 1);
  const double* s = strict.data();
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = diag != nullptr ? (*diag)(i) * x(i) : x(i);
    if (tri == Triangle::Upper) {
      for (Eigen::Index j = i + 1; j < n; ++j) acc += s[k++] * x(j);
    } else {
      for (Eigen::Index j = 0; j < i; ++j) acc += s[k++] * x(j);
    }
    y(i) = acc;
  }
  return y;
}

double gaussian_logpdf(const Array& x, const Array& mean,
                       const Array& scale) {
  if (x.size() != mean.size() || x.size() != scale.size()) {
    throw std::invalid_argument("gaussian_logpdf: shape mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double r = (x(i) - mean(i)) / scale(i);
    total += -kHalfLog2Pi - std::log(scale(i)) - 0.5 * r * r;
  }
  return total;
}

Array concat(std::span<const Array* const> parts) {
  Eigen::Index rows = 0;
  for (const Array* p : parts) {
    if (p->cols() != 1) throw std::invalid_argument("concat: expects vectors");
    rows += p->rows();
  }
  Array out(rows, 1);
  Eigen::Index off = 0;
  for (const Array* p : parts) {
    out.middleRows(off, p->rows()) = *p;
    off += p->rows();
  }
  return out;
}

}  // namespace cflow::diff::kernels
