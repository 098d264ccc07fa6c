#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflow/program/graph.hpp"

namespace testing {

using cflow::AffineLink;
using cflow::ConstantLink;
using cflow::Node;
using cflow::ProgramGraph;

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Node root(const std::string& name, double mean, double sd, int dim = 1) {
  Node n;
  n.name = name;
  n.dim = dim;
  n.link = ConstantLink{Eigen::VectorXd::Constant(dim, mean), Eigen::VectorXd::Constant(dim, sd)};
  return n;
}

// location = sum of weights * parents + bias, scalar nodes.
inline Node affine(const std::string& name, std::vector<std::string> parents,
                   std::vector<double> weights, double bias, double sd, bool observed = false) {
  Node n;
  n.name = name;
  n.parents = std::move(parents);
  Eigen::MatrixXd w(1, static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < weights.size(); ++i) w(0, i) = weights[i];
  n.link = AffineLink{w, Eigen::VectorXd::Constant(1, bias), Eigen::VectorXd::Constant(1, sd)};
  n.observed = observed;
  return n;
}

// x ~ N(0, 1), y | x ~ N(x, 1) with y observed.
inline ProgramGraph conjugate() {
  ProgramGraph g;
  g.add_node(root("x", 0.0, 1.0));
  g.add_node(affine("y", {"x"}, {1.0}, 0.0, 1.0, true));
  return g;
}

// a -> b -> c latent with an observed child of c and a collider on b.
inline ProgramGraph three_node() {
  ProgramGraph g;
  g.add_node(root("a", 0.3, 1.2));
  g.add_node(root("b", -0.2, 0.8));
  g.add_node(affine("c", {"a", "b"}, {0.7, -0.5}, 0.1, 0.6));
  g.add_node(affine("y", {"c"}, {1.5}, 0.0, 0.5, true));
  return g;
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace testing
