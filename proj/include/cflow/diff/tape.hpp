#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cflow/diff/array.hpp"
#include "cflow/diff/param_store.hpp"

namespace cflow::diff {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Array& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recording of a fixed primitive set. Nodes are appended in
/// evaluation order, so the record is acyclic by construction and backward()
/// visits each node once in reverse.
class Tape {
 public:
  using Value = Var;

  explicit Tape(ParamStore* params = nullptr);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf bound to a ParamStore entry; repeated calls return the same node.
  Var param(const std::string& name);
  Var constant(Array v);
  Var constant(double v);

  const Array& value(const Var& v) const { return nodes_[v.id()].value; }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var matvec(Var matrix, Var x);
  // `diag` may be invalid (default Var) for a unit diagonal.
  Var tri_matvec(Var strict, Var diag, Var x, Triangle tri);
  // weight * x + bias with constant weight and bias.
  Var affine(const Array& weight, Var x, const Array& bias);
  Var concat(std::span<const Var> parts);
  Var slice(Var a, int offset, int length);
  Var row(Var a, int r);
  Var exp(Var a);
  Var log(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var square(Var a);
  Var softmax(Var a);  // column-wise
  Var sum(Var a);
  Var gaussian_logpdf(Var x, Var mean, Var scale);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every parameter's gradient
  // slot. The loss must be 1 x 1.
  void backward(Var loss);
  // Adjoint of a node after backward(); zero if the node did not influence
  // the loss.
  Array adjoint(Var v) const;

 private:
  enum class Op : std::uint8_t {
    Param, Constant, Add, Sub, Mul, Scale, AddScalar, MatVec, TriMatVec,
    Affine, Concat, Slice, Row, Exp, Log, Sigmoid, Softplus, Tanh, Relu,
    Square, Softmax, Sum, GaussianLogpdf
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    int i0 = 0, i1 = 0;
    double k = 0.0;
    Array value;
    Array weight;  // Affine: constant weight
    ParamStore::Entry* param = nullptr;
  };

  Var push(Node n);
  void accumulate(std::vector<Array>& adj, std::vector<char>& live, int id,
                  const Array& g) const;

  ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<int> extra_;  // Concat operand lists
  std::vector<Array> adjoints_;
  std::unordered_map<std::string, int> param_nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double k, Var a);
Var operator+(Var a, double k);
Var operator-(double k, Var a);

}  // namespace cflow::diff
