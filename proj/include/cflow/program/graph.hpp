#pragma once

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflow/distributions.hpp"
#include "cflow/program/link.hpp"

namespace cflow {

using Rng = std::mt19937_64;

/// Values keyed by node name. Bernoulli values are 1-vectors holding 0 or 1.
using Assignment = std::map<std::string, Eigen::VectorXd>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  std::string name;
  int dim = 1;
  Family family = Family::Gaussian;
  Link link;
  std::vector<std::string> parents;
  bool observed = false;
};

/// A probabilistic program: p(x) = prod_j rho_j(x_j | theta_j(parents_j)).
class ProgramGraph {
 public:
  ProgramGraph() = default;

  // Parents may be added later; validity is checked by topological_order().
  void add_node(Node node);
  void set_observed(const std::string& name, bool observed);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int index) const { return nodes_[index]; }
  const Node& node(const std::string& name) const { return nodes_[index_of(name)]; }
  int index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return nodes_.size(); }

  // Throws GraphError if a parent name is unknown.
  const std::vector<int>& parent_indices(int index) const;
  const std::vector<int>& child_indices(int index) const;
  std::vector<int> latent_indices() const;    // topological order
  std::vector<int> observed_indices() const;  // topological order
  int latent_dim() const;

 private:
  void rebuild_edges();

  std::vector<Node> nodes_;
  std::map<std::string, int> index_;
  std::vector<std::vector<int>> parents_;  // -1 marks an unresolved name
  std::vector<std::vector<int>> children_;
};

/// Node indices with every node after all of its parents. Ties keep insertion
/// order. Throws GraphError on cycles or unknown parents.
std::vector<int> topological_order(const ProgramGraph& g);

/// Visits nodes in topological order; clamped nodes are copied, the rest are
/// drawn from rho_j(. | theta_j(parents)).
Assignment ancestral_sample(const ProgramGraph& g, Rng& rng,
                            const Assignment& clamps = {});

/// sum_j log rho_j(a_j | theta_j(a_parents)).
double joint_log_density(const ProgramGraph& g, const Assignment& a);

/// Per-node conditional log densities, indexed like g.nodes().
std::vector<double> node_log_densities(const ProgramGraph& g, const Assignment& a);

/// Concatenated values of a node's parents.
template <class V, class Ops>
V gather_parents(Ops& ops, const ProgramGraph& g, int index,
                 const std::vector<V>& values) {
  const std::vector<int>& parents = g.parent_indices(index);
  if (parents.empty()) return V{};
  if (parents.size() == 1) return values[parents[0]];
  std::vector<V> parts;
  parts.reserve(parents.size());
  for (int p : parents) parts.push_back(values[p]);
  return ops.concat(parts);
}

/// log rho_j(value | params) on either evaluator.
template <class Ops>
typename Ops::Value node_log_density(Ops& ops, const Node& node,
                                     const typename Ops::Value& value,
                                     const FamilyParams<typename Ops::Value>& params,
                                     double observed_bit = -1.0) {
  if (node.family == Family::Gaussian) {
    return ops.gaussian_logpdf(value, params.location, params.scale);
  }
  return bernoulli_logit_logpmf(ops, observed_bit, params.location);
}

/// Joint log density where `values` are indexed like g.nodes(). Bernoulli
/// node values must be constants (observed data).
template <class Ops>
typename Ops::Value joint_log_density(Ops& ops, const ProgramGraph& g,
                                      const std::vector<typename Ops::Value>& values,
                                      const std::vector<int>& order) {
  using V = typename Ops::Value;
  V total{};
  bool first = true;
  for (int j : order) {
    const Node& node = g.node(j);
    const V parents = gather_parents<V>(ops, g, j, values);
    const FamilyParams<V> params = evaluate_link(ops, node.link, parents);
    double bit = -1.0;
    if (node.family == Family::BernoulliLogit) bit = ops.value(values[j])(0, 0);
    const V term = node_log_density(ops, node, values[j], params, bit);
    total = first ? term : ops.add(total, term);
    first = false;
  }
  return total;
}

}  // namespace cflow
