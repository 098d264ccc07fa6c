#include "cflow/diff/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "cflow/diff/kernels.hpp"

namespace cflow::diff {

namespace {

bool is_scalar(const Array& a) { return a.rows() == 1 && a.cols() == 1; }

// Reduce an adjoint to the shape of a (possibly broadcast) operand.
Array reduce_to(const Array& g, const Array& operand) {
  if (is_scalar(operand) && !is_scalar(g)) {
    Array s(1, 1);
    s(0, 0) = g.sum();
    return s;
  }
  return g;
}

}  // namespace

const Array& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Array& v = value();
  if (!is_scalar(v)) throw std::invalid_argument("Var::scalar: not 1 x 1");
  return v(0, 0);
}

Tape::Tape(ParamStore* params) : params_(params) { nodes_.reserve(1024); }

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const std::string& name) {
  if (params_ == nullptr) {
    throw std::logic_error("Tape::param: tape has no parameter store");
  }
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var(this, it->second);
  ParamStore::Entry& e = params_->at(name);
  Node n{Op::Param};
  n.value = e.value;
  n.param = &e;
  Var v = push(std::move(n));
  param_nodes_.emplace(name, v.id());
  return v;
}

Var Tape::constant(Array v) {
  Node n{Op::Constant};
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::constant(double v) {
  Array a(1, 1);
  a(0, 0) = v;
  return constant(std::move(a));
}

Var Tape::add(Var a, Var b) {
  Node n{Op::Add, a.id(), b.id()};
  n.value = kernels::add(value(a), value(b));
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  Node n{Op::Sub, a.id(), b.id()};
  n.value = kernels::sub(value(a), value(b));
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  Node n{Op::Mul, a.id(), b.id()};
  n.value = kernels::mul(value(a), value(b));
  return push(std::move(n));
}

Var Tape::scale(Var a, double k) {
  Node n{Op::Scale, a.id()};
  n.k = k;
  n.value = k * value(a);
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double k) {
  Node n{Op::AddScalar, a.id()};
  n.value = (value(a).array() + k).matrix();
  return push(std::move(n));
}

Var Tape::matvec(Var matrix, Var x) {
  const Array& m = value(matrix);
  const Array& v = value(x);
  if (m.cols() != v.rows() || v.cols() != 1) {
    throw std::invalid_argument("matvec: shape mismatch");
  }
  Node n{Op::MatVec, matrix.id(), x.id()};
  n.value = m * v;
  return push(std::move(n));
}

Var Tape::tri_matvec(Var strict, Var diag, Var x, Triangle tri) {
  Node n{Op::TriMatVec, strict.id(), diag.valid() ? diag.id() : -1, x.id()};
  n.i0 = tri == Triangle::Upper ? 0 : 1;
  n.value = kernels::tri_matvec(value(strict),
                                diag.valid() ? &value(diag) : nullptr,
                                value(x), tri);
  return push(std::move(n));
}

Var Tape::affine(const Array& weight, Var x, const Array& bias) {
  const Array& v = value(x);
  if (weight.cols() != v.rows() || bias.rows() != weight.rows() ||
      v.cols() != 1) {
    throw std::invalid_argument("affine: shape mismatch");
  }
  Node n{Op::Affine, x.id()};
  n.value = weight * v + bias;
  n.weight = weight;
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  std::vector<const Array*> ptrs;
  ptrs.reserve(parts.size());
  Node n{Op::Concat};
  n.i0 = static_cast<int>(extra_.size());
  n.i1 = static_cast<int>(parts.size());
  for (const Var& p : parts) {
    ptrs.push_back(&value(p));
    extra_.push_back(p.id());
  }
  n.value = kernels::concat(ptrs);
  return push(std::move(n));
}

Var Tape::slice(Var a, int offset, int length) {
  const Array& v = value(a);
  if (v.cols() != 1 || offset < 0 || length < 0 || offset + length > v.rows()) {
    throw std::invalid_argument("slice: out of range");
  }
  Node n{Op::Slice, a.id()};
  n.i0 = offset;
  n.i1 = length;
  n.value = v.middleRows(offset, length);
  return push(std::move(n));
}

Var Tape::row(Var a, int r) {
  const Array& v = value(a);
  if (r < 0 || r >= v.rows()) throw std::invalid_argument("row: out of range");
  Node n{Op::Row, a.id()};
  n.i0 = r;
  n.value = v.row(r).transpose();
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  Node n{Op::Exp, a.id()};
  n.value = value(a).array().exp().matrix();
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n{Op::Log, a.id()};
  n.value = value(a).array().log().matrix();
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n{Op::Sigmoid, a.id()};
  n.value = kernels::sigmoid(value(a));
  return push(std::move(n));
}

Var Tape::softplus(Var a) {
  Node n{Op::Softplus, a.id()};
  n.value = kernels::softplus(value(a));
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n{Op::Tanh, a.id()};
  n.value = value(a).array().tanh().matrix();
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n{Op::Relu, a.id()};
  n.value = kernels::relu(value(a));
  return push(std::move(n));
}

Var Tape::square(Var a) {
  Node n{Op::Square, a.id()};
  n.value = value(a).array().square().matrix();
  return push(std::move(n));
}

Var Tape::softmax(Var a) {
  Node n{Op::Softmax, a.id()};
  n.value = kernels::softmax_columns(value(a));
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n{Op::Sum, a.id()};
  n.value = Array::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var Tape::gaussian_logpdf(Var x, Var mean, Var scale) {
  Node n{Op::GaussianLogpdf, x.id(), mean.id(), scale.id()};
  n.value = Array::Constant(
      1, 1, kernels::gaussian_logpdf(value(x), value(mean), value(scale)));
  return push(std::move(n));
}

void Tape::accumulate(std::vector<Array>& adj, std::vector<char>& live, int id,
                      const Array& g) const {
  if (!live[id]) {
    adj[id] = g;
    live[id] = 1;
  } else {
    adj[id] += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: foreign Var");
  if (!is_scalar(value(loss))) {
    throw std::invalid_argument("backward: loss must be a scalar (1 x 1)");
  }
  const int count = static_cast<int>(nodes_.size());
  std::vector<Array> adj(count);
  std::vector<char> live(count, 0);
  adj[loss.id()] = Array::Ones(1, 1);
  live[loss.id()] = 1;

  auto acc = [&](int id, const Array& g) { accumulate(adj, live, id, g); };

  for (int i = loss.id(); i >= 0; --i) {
    if (!live[i]) continue;
    const Node& n = nodes_[i];
    const Array& g = adj[i];
    switch (n.op) {
      case Op::Param:
        n.param->grad += g;
        break;
      case Op::Constant:
        break;
      case Op::Add:
        acc(n.a, reduce_to(g, nodes_[n.a].value));
        acc(n.b, reduce_to(g, nodes_[n.b].value));
        break;
      case Op::Sub:
        acc(n.a, reduce_to(g, nodes_[n.a].value));
        acc(n.b, reduce_to(-g, nodes_[n.b].value));
        break;
      case Op::Mul: {
        const Array& va = nodes_[n.a].value;
        const Array& vb = nodes_[n.b].value;
        acc(n.a, reduce_to(kernels::mul(g, vb), va));
        acc(n.b, reduce_to(kernels::mul(g, va), vb));
        break;
      }
      case Op::Scale:
        acc(n.a, n.k * g);
        break;
      case Op::AddScalar:
        acc(n.a, g);
        break;
      case Op::MatVec: {
        const Array& m = nodes_[n.a].value;
        const Array& x = nodes_[n.b].value;
        acc(n.a, g * x.transpose());
        acc(n.b, m.transpose() * g);
        break;
      }
      case Op::TriMatVec: {
        const Array& s = nodes_[n.a].value;
        const Array& x = nodes_[n.c].value;
        const Eigen::Index dim = x.rows();
        const bool upper = n.i0 == 0;
        Array gs(s.rows(), s.cols());
        Array gx = Array::Zero(dim, 1);
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < dim; ++r) {
          const Eigen::Index lo = upper ? r + 1 : 0;
          const Eigen::Index hi = upper ? dim : r;
          for (Eigen::Index c = lo; c < hi; ++c, ++k) {
            gs(k) = g(r) * x(c);
            gx(c) += s(k) * g(r);
          }
        }
        if (n.b >= 0) {
          const Array& d = nodes_[n.b].value;
          gx += d.cwiseProduct(g);
          acc(n.b, g.cwiseProduct(x));
        } else {
          gx += g;
        }
        acc(n.a, gs);
        acc(n.c, gx);
        break;
      }
      case Op::Affine:
        acc(n.a, n.weight.transpose() * g);
        break;
      case Op::Concat: {
        Eigen::Index off = 0;
        for (int j = 0; j < n.i1; ++j) {
          const int id = extra_[n.i0 + j];
          const Eigen::Index r = nodes_[id].value.rows();
          acc(id, g.middleRows(off, r));
          off += r;
        }
        break;
      }
      case Op::Slice: {
        Array full = Array::Zero(nodes_[n.a].value.rows(), 1);
        full.middleRows(n.i0, n.i1) = g;
        acc(n.a, full);
        break;
      }
      case Op::Row: {
        const Array& src = nodes_[n.a].value;
        Array full = Array::Zero(src.rows(), src.cols());
        full.row(n.i0) = g.transpose();
        acc(n.a, full);
        break;
      }
      case Op::Exp:
        acc(n.a, g.cwiseProduct(n.value));
        break;
      case Op::Log:
        acc(n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::Sigmoid:
        acc(n.a, (g.array() * n.value.array() * (1.0 - n.value.array())).matrix());
        break;
      case Op::Softplus:
        acc(n.a, g.cwiseProduct(kernels::sigmoid(nodes_[n.a].value)));
        break;
      case Op::Tanh:
        acc(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::Relu:
        acc(n.a, (g.array() * (nodes_[n.a].value.array() > 0.0).cast<double>())
                     .matrix());
        break;
      case Op::Square:
        acc(n.a, (2.0 * g.array() * nodes_[n.a].value.array()).matrix());
        break;
      case Op::Softmax: {
        const Array& y = n.value;
        Array ga(y.rows(), y.cols());
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          const double dot = g.col(c).dot(y.col(c));
          ga.col(c) = (y.col(c).array() * (g.col(c).array() - dot)).matrix();
        }
        acc(n.a, ga);
        break;
      }
      case Op::Sum:
        acc(n.a, Array::Constant(nodes_[n.a].value.rows(),
                                 nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case Op::GaussianLogpdf: {
        const Array& x = nodes_[n.a].value;
        const Array& m = nodes_[n.b].value;
        const Array& s = nodes_[n.c].value;
        const double gs = g(0, 0);
        const Array r = (x - m).cwiseQuotient(s);
        const Array dx = (-gs) * r.cwiseQuotient(s);
        acc(n.a, dx);
        acc(n.b, -dx);
        acc(n.c, (gs * (r.array().square() - 1.0) / s.array()).matrix());
        break;
      }
    }
  }
  adjoints_ = std::move(adj);
  for (int i = 0; i < count; ++i) {
    if (!live[i]) adjoints_[i] = Array();
  }
}

Array Tape::adjoint(Var v) const {
  if (v.id() < static_cast<int>(adjoints_.size()) &&
      adjoints_[v.id()].size() != 0) {
    return adjoints_[v.id()];
  }
  const Array& val = value(v);
  return Array::Zero(val.rows(), val.cols());
}

Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }
Var operator*(double k, Var a) { return a.tape()->scale(a, k); }
Var operator+(Var a, double k) { return a.tape()->add_scalar(a, k); }
Var operator-(double k, Var a) {
  return a.tape()->add_scalar(a.tape()->scale(a, -1.0), k);
}

}  // namespace cflow::diff
