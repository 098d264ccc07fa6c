#pragma once

#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cflow/diff/array.hpp"

namespace cflow {

enum class Family { Gaussian, BernoulliLogit };

/// Parameters of a node's density. For Bernoulli-logit nodes `location` is the
/// 1-vector logit and `scale` is unused.
template <class V>
struct FamilyParams {
  V location;
  V scale;
};

/// theta is a constant (root nodes).
struct ConstantLink {
  Eigen::VectorXd location;
  Eigen::VectorXd scale;
};

/// location = weight * parents + bias; constant scale.
struct AffineLink {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  Eigen::VectorXd scale;
};

enum class DriftKind { Lorenz, PopulationDynamics, Recurrent };

/// mu(x) = tanh(w3 tanh(w2 tanh(w1 x + b1) + b2)).
struct RecurrentDrift {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2;
};

/// Euler-Maruyama transition: location = x + dt * mu(x).
struct DriftLink {
  DriftKind kind = DriftKind::Lorenz;
  double dt = 1.0;
  Eigen::VectorXd scale;
  RecurrentDrift rnn;
};

/// location = tanh(p1) - tanh(p2) for two scalar parents.
struct TanhDifferenceLink {
  Eigen::VectorXd scale;
};

using Link = std::variant<ConstantLink, AffineLink, DriftLink, TanhDifferenceLink>;

std::string link_kind_name(const Link& link);
bool is_affine(const Link& link);

/// Drift mu(x) on either evaluator.
template <class Ops>
typename Ops::Value evaluate_drift(Ops& ops, const DriftLink& link,
                                   const typename Ops::Value& x) {
  using V = typename Ops::Value;
  switch (link.kind) {
    case DriftKind::Lorenz: {
      const V x1 = ops.slice(x, 0, 1);
      const V x2 = ops.slice(x, 1, 1);
      const V x3 = ops.slice(x, 2, 1);
      const V d1 = ops.scale(ops.sub(x2, x1), 10.0);
      const V d2 = ops.sub(ops.mul(x1, ops.add_scalar(ops.scale(x3, -1.0), 28.0)), x2);
      const V d3 = ops.sub(ops.mul(x1, x2), ops.scale(x3, 8.0 / 3.0));
      const V parts[] = {d1, d2, d3};
      return ops.concat(parts);
    }
    case DriftKind::PopulationDynamics: {
      const V x1 = ops.slice(x, 0, 1);
      const V x2 = ops.slice(x, 1, 1);
      const V x1x2 = ops.mul(x1, x2);
      const V d1 = ops.relu(ops.sub(ops.scale(x1, 0.2), ops.scale(x1x2, 0.02)));
      const V d2 = ops.relu(ops.sub(ops.scale(x1x2, 0.1), ops.scale(x2, 0.1)));
      const V parts[] = {d1, d2};
      return ops.concat(parts);
    }
    case DriftKind::Recurrent: {
      const RecurrentDrift& r = link.rnn;
      const V h1 = ops.tanh(ops.affine(r.w1, x, r.b1));
      const V h2 = ops.tanh(ops.affine(r.w2, h1, r.b2));
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(r.w3.rows());
      return ops.tanh(ops.affine(r.w3, h2, zero));
    }
  }
  return x;
}

/// theta(parents). `parents` is the concatenation of parent values in parent
/// list order (unused for ConstantLink).
template <class Ops>
FamilyParams<typename Ops::Value> evaluate_link(Ops& ops, const Link& link,
                                                const typename Ops::Value& parents) {
  using V = typename Ops::Value;
  return std::visit(
      [&](const auto& l) -> FamilyParams<V> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConstantLink>) {
          return {ops.constant(l.location),
                  l.scale.size() ? ops.constant(l.scale) : V{}};
        } else if constexpr (std::is_same_v<L, AffineLink>) {
          return {ops.affine(l.weight, parents, l.bias),
                  l.scale.size() ? ops.constant(l.scale) : V{}};
        } else if constexpr (std::is_same_v<L, DriftLink>) {
          const V drift = evaluate_drift(ops, l, parents);
          return {ops.add(parents, ops.scale(drift, l.dt)), ops.constant(l.scale)};
        } else {
          const V a = ops.tanh(ops.slice(parents, 0, 1));
          const V b = ops.tanh(ops.slice(parents, 1, 1));
          return {ops.sub(a, b), ops.constant(l.scale)};
        }
      },
      link);
}

}  // namespace cflow
