#include "cflow/program/graph.hpp"

#include <algorithm>
#include <queue>

#include "cflow/diff/eval.hpp"

namespace cflow {

void ProgramGraph::add_node(Node node) {
  if (node.name.empty()) throw GraphError("node name must be non-empty");
  if (node.dim < 1) throw GraphError("node '" + node.name + "': dim must be >= 1");
  if (index_.count(node.name) != 0) {
    throw GraphError("duplicate node name '" + node.name + "'");
  }
  if (node.family == Family::BernoulliLogit && node.dim != 1) {
    throw GraphError("node '" + node.name + "': Bernoulli nodes are scalar");
  }
  if (node.parents.empty() && !std::holds_alternative<ConstantLink>(node.link)) {
    throw GraphError("node '" + node.name + "': root nodes need a constant link");
  }
  index_.emplace(node.name, static_cast<int>(nodes_.size()));
  nodes_.push_back(std::move(node));
  rebuild_edges();
}

void ProgramGraph::set_observed(const std::string& name, bool observed) {
  nodes_[index_of(name)].observed = observed;
}

int ProgramGraph::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw GraphError("unknown node '" + name + "'");
  return it->second;
}

void ProgramGraph::rebuild_edges() {
  parents_.assign(nodes_.size(), {});
  children_.assign(nodes_.size(), {});
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    for (const std::string& p : nodes_[j].parents) {
      auto it = index_.find(p);
      const int pi = it == index_.end() ? -1 : it->second;
      parents_[j].push_back(pi);
      if (pi >= 0) children_[pi].push_back(static_cast<int>(j));
    }
  }
}

const std::vector<int>& ProgramGraph::parent_indices(int index) const {
  const std::vector<int>& ps = parents_[index];
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (ps[k] < 0) {
      throw GraphError("node '" + nodes_[index].name + "' has unknown parent '" +
                       nodes_[index].parents[k] + "'");
    }
  }
  return ps;
}

const std::vector<int>& ProgramGraph::child_indices(int index) const {
  return children_[index];
}

std::vector<int> ProgramGraph::latent_indices() const {
  std::vector<int> out;
  for (int j : topological_order(*this)) {
    if (!nodes_[j].observed) out.push_back(j);
  }
  return out;
}

std::vector<int> ProgramGraph::observed_indices() const {
  std::vector<int> out;
  for (int j : topological_order(*this)) {
    if (nodes_[j].observed) out.push_back(j);
  }
  return out;
}

int ProgramGraph::latent_dim() const {
  int d = 0;
  for (const Node& n : nodes_) {
    if (!n.observed) d += n.dim;
  }
  return d;
}

std::vector<int> topological_order(const ProgramGraph& g) {
  const int n = static_cast<int>(g.size());
  std::vector<int> pending(n, 0);
  for (int j = 0; j < n; ++j) {
    pending[j] = static_cast<int>(g.parent_indices(j).size());
  }
  // Min-heap on index keeps the order stable with respect to insertion.
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int j = 0; j < n; ++j) {
    if (pending[j] == 0) ready.push(j);
  }
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int j = ready.top();
    ready.pop();
    order.push_back(j);
    for (int c : g.child_indices(j)) {
      if (--pending[c] == 0) ready.push(c);
    }
  }
  if (static_cast<int>(order.size()) != n) {
    throw GraphError("program graph contains a cycle");
  }
  return order;
}

Assignment ancestral_sample(const ProgramGraph& g, Rng& rng,
                            const Assignment& clamps) {
  for (const auto& [name, v] : clamps) {
    const Node& node = g.node(name);
    if (v.size() != node.dim) {
      throw std::invalid_argument("ancestral_sample: clamp '" + name +
                                  "' has wrong dimension");
    }
  }
  diff::Eval ops;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<diff::Array> values(g.size());
  for (int j : topological_order(g)) {
    const Node& node = g.node(j);
    auto it = clamps.find(node.name);
    if (it != clamps.end()) {
      values[j] = it->second;
      continue;
    }
    const diff::Array parents = gather_parents<diff::Array>(ops, g, j, values);
    const FamilyParams<diff::Array> p = evaluate_link(ops, node.link, parents);
    if (node.family == Family::Gaussian) {
      diff::Array noise(node.dim, 1);
      for (int i = 0; i < node.dim; ++i) noise(i) = normal(rng);
      values[j] = normal_rsample(ops, p.location, p.scale, noise);
    } else {
      const double u = uniform(rng);
      values[j] = diff::Array::Constant(
          1, 1, bernoulli_sample({p.location(0, 0)}, u));
    }
  }
  Assignment out;
  for (std::size_t j = 0; j < g.size(); ++j) out.emplace(g.node(j).name, values[j]);
  return out;
}

namespace {

std::vector<diff::Array> values_by_index(const ProgramGraph& g,
                                         const Assignment& a) {
  std::vector<diff::Array> values(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    const Node& node = g.node(static_cast<int>(j));
    auto it = a.find(node.name);
    if (it == a.end()) {
      throw std::invalid_argument("joint_log_density: missing value for '" +
                                  node.name + "'");
    }
    if (it->second.size() != node.dim) {
      throw std::invalid_argument("joint_log_density: wrong dimension for '" +
                                  node.name + "'");
    }
    if (node.family == Family::BernoulliLogit && it->second(0) != 0.0 &&
        it->second(0) != 1.0) {
      throw std::invalid_argument("joint_log_density: Bernoulli value for '" +
                                  node.name + "' must be 0 or 1");
    }
    values[j] = it->second;
  }
  return values;
}

}  // namespace

std::vector<double> node_log_densities(const ProgramGraph& g, const Assignment& a) {
  diff::Eval ops;
  const std::vector<diff::Array> values = values_by_index(g, a);
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const int i = static_cast<int>(j);
    const Node& node = g.node(i);
    const diff::Array parents = gather_parents<diff::Array>(ops, g, i, values);
    const FamilyParams<diff::Array> p = evaluate_link(ops, node.link, parents);
    out[j] = node_log_density(ops, node, values[j], p, values[j](0, 0))(0, 0);
  }
  return out;
}

double joint_log_density(const ProgramGraph& g, const Assignment& a) {
  diff::Eval ops;
  const std::vector<diff::Array> values = values_by_index(g, a);
  return joint_log_density(ops, g, values, topological_order(g))(0, 0);
}

}  // namespace cflow
