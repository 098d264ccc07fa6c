#include <doctest.h>

#include <algorithm>

#include "cflow/diff/eval.hpp"
#include "cflow/metrics/metrics.hpp"
#include "cflow/program/models.hpp"
#include "cflow/program/serialize.hpp"
#include "helpers.hpp"

using namespace cflow;
using testing::affine;
using testing::root;
using testing::vec;

namespace {

int position(const std::vector<int>& order, int node) {
  return static_cast<int>(std::find(order.begin(), order.end(), node) - order.begin());
}

}  // namespace

TEST_CASE("topological order") {
  ProgramGraph chain;
  chain.add_node(affine("b", {"a"}, {1.0}, 0.0, 1.0));
  chain.add_node(root("a", 0, 1));
  const auto o = topological_order(chain);
  CHECK(chain.node(o[0]).name == "a");
  CHECK(chain.node(o[1]).name == "b");

  ProgramGraph diamond;
  diamond.add_node(root("a", 0, 1));
  diamond.add_node(affine("d", {"b", "c"}, {1, 1}, 0, 1));
  diamond.add_node(affine("b", {"a"}, {1}, 0, 1));
  diamond.add_node(affine("c", {"a"}, {1}, 0, 1));
  const auto d = topological_order(diamond);
  CHECK(diamond.node(d.front()).name == "a");
  CHECK(diamond.node(d.back()).name == "d");
  for (std::size_t j = 0; j < diamond.size(); ++j) {
    for (int p : diamond.parent_indices(static_cast<int>(j))) {
      CHECK(position(d, p) < position(d, static_cast<int>(j)));
    }
  }

  ProgramGraph loop;
  loop.add_node(root("r", 0, 1));
  loop.add_node(affine("x", {"x"}, {1}, 0, 1));
  CHECK_THROWS_AS(topological_order(loop), GraphError);

  ProgramGraph missing;
  missing.add_node(affine("x", {"nope"}, {1}, 0, 1));
  CHECK_THROWS_AS(topological_order(missing), GraphError);
}

TEST_CASE("ancestral sampling") {
  ProgramGraph g;
  g.add_node(root("x0", 0, 1));
  g.add_node(affine("x1", {"x0"}, {1}, 0, 1));
  Rng rng(4);
  const Assignment clamps{{"x0", vec({0.3})}, {"x1", vec({-2})}};
  const Assignment all = ancestral_sample(g, rng, clamps);
  CHECK(all.at("x0")(0) == 0.3);
  CHECK(all.at("x1")(0) == -2.0);
  CHECK_THROWS(ancestral_sample(g, rng, {{"x0", vec({1, 2})}}));

  std::vector<double> x1;
  for (int i = 0; i < 100000; ++i) x1.push_back(ancestral_sample(g, rng).at("x1")(0));
  CHECK(std::abs(testing::variance(x1) - 2.0) < 0.05);
}

TEST_CASE("Brownian marginal variance grows by one per step") {
  SdeModelSpec spec = sde_preset(SdeModelKind::Brownian);
  spec.horizon = 6;
  const ProgramGraph g = build_sde_model(spec);
  Rng rng(9);
  std::vector<std::vector<double>> xs(6);
  for (int i = 0; i < 40000; ++i) {
    const Assignment a = ancestral_sample(g, rng);
    for (int t = 0; t < 6; ++t) xs[t].push_back(a.at(latent_name(t))(0));
  }
  for (int t = 0; t < 6; ++t) {
    const double expect = 1.0 + t;  // init SD 1, sigma^2 dt = 1 per step
    const double se = expect * std::sqrt(2.0 / 40000);
    CHECK(std::abs(testing::variance(xs[t]) - expect) < 4 * se);
  }
}

TEST_CASE("joint log density") {
  ProgramGraph ind;
  ind.add_node(root("a", 0, 1));
  ind.add_node(root("b", 0, 1));
  CHECK(joint_log_density(ind, {{"a", vec({0})}, {"b", vec({0})}}) ==
        doctest::Approx(-1.837877).epsilon(1e-6));

  ProgramGraph chain;
  chain.add_node(root("x0", 0, 1));
  chain.add_node(affine("x1", {"x0"}, {1}, 0, 1));
  CHECK(joint_log_density(chain, {{"x0", vec({0})}, {"x1", vec({0})}}) ==
        doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK_THROWS(joint_log_density(chain, {{"x0", vec({0})}}));

  const ProgramGraph g = testing::three_node();
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Assignment a = ancestral_sample(g, rng);
    const auto terms = node_log_densities(g, a);
    double total = 0;
    for (double t : terms) total += t;
    CHECK(joint_log_density(g, a) == doctest::Approx(total).epsilon(1e-13));
    CHECK(std::isfinite(total));
  }
}

TEST_CASE("sde model zoo") {
  SdeModelSpec br = sde_preset(SdeModelKind::Brownian);
  br.horizon = 40;
  const ProgramGraph g = build_sde_model(br);
  CHECK(g.size() == 40);
  for (const Node& n : g.nodes()) CHECK(n.dim == 1);
  diff::Eval ops;
  const auto& link = g.node(latent_name(5)).link;
  const auto params = evaluate_link(ops, link, vec({1.7}));
  CHECK(params.location(0) == 1.7);
  CHECK(params.scale(0) == 1.0);

  const SdeModelSpec lz = sde_preset(SdeModelKind::Lorenz);
  const Eigen::VectorXd d = sde_drift(lz, vec({1, 1, 1}));
  CHECK(d(0) == doctest::Approx(0.0));
  CHECK(d(1) == doctest::Approx(26.0));
  CHECK(d(2) == doctest::Approx(-5.0 / 3.0));

  const SdeModelSpec pd = sde_preset(SdeModelKind::PopulationDynamics);
  const Eigen::VectorXd p = sde_drift(pd, vec({1, 1}));
  CHECK(p(0) == doctest::Approx(0.18));
  CHECK(p(1) == doctest::Approx(0.0));

  SdeModelSpec bad = br;
  bad.horizon = 1;
  CHECK_THROWS(validate(bad));
  bad = br;
  bad.dt = 0;
  CHECK_THROWS(validate(bad));
}

TEST_CASE("emissions") {
  SdeModelSpec spec = sde_preset(SdeModelKind::Lorenz);
  spec.horizon = 40;
  spec.noise_sd = 1.0;
  diff::Eval ops;
  const auto reg = evaluate_link(ops, emission_link(spec), vec({2, 5, -1}));
  CHECK(reg.location(0) == 2.0);
  CHECK(reg.scale(0) == 1.0);
  CHECK(emission_family(spec) == Family::Gaussian);

  spec.emission = EmissionKind::Classification;
  const auto cls = evaluate_link(ops, emission_link(spec), vec({0, 3, 3}));
  CHECK(emission_family(spec) == Family::BernoulliLogit);
  CHECK(cls.location(0) == 0.0);

  const ProgramGraph chain = build_sde_model(spec);
  const ProgramGraph half = attach_emissions(chain, spec, 0, 20);
  CHECK(half.observed_indices().size() == 20);
  CHECK(half.latent_indices().size() == 40);
  CHECK_THROWS(attach_emissions(chain, spec, 0, 41));
}

TEST_CASE("emissions leave the latent density unchanged") {
  SdeModelSpec spec = sde_preset(SdeModelKind::PopulationDynamics);
  spec.horizon = 8;
  const ProgramGraph chain = build_sde_model(spec);
  const ProgramGraph full = attach_emissions(chain, spec, 0, 4);
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    const Assignment a = ancestral_sample(full, rng);
    const auto terms = node_log_densities(full, a);
    double latent = 0;
    for (int j : full.latent_indices()) latent += terms[j];
    Assignment sub;
    for (int t = 0; t < 8; ++t) sub[latent_name(t)] = a.at(latent_name(t));
    CHECK(joint_log_density(chain, sub) == doctest::Approx(latent).epsilon(1e-13));
  }
}

TEST_CASE("binary trees") {
  const ProgramGraph d2 = build_binary_tree(tree_preset(TreeLinkKind::Linear, 2));
  CHECK(d2.size() == 7);
  CHECK(d2.latent_indices().size() == 6);
  const ProgramGraph d4 = build_binary_tree(tree_preset(TreeLinkKind::Tanh, 4));
  CHECK(d4.size() == 31);
  CHECK(d4.latent_indices().size() == 30);
  CHECK(d4.node(tree_node_name(4, 0)).observed);

  diff::Eval ops;
  const auto lin = evaluate_link(ops, d2.node(tree_node_name(1, 0)).link, vec({0.5, 0.2}));
  CHECK(lin.location(0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(lin.scale(0) == 0.15);
  const auto th = evaluate_link(ops, d4.node(tree_node_name(1, 0)).link, vec({0.5, 0.2}));
  CHECK(th.location(0) == doctest::Approx(std::tanh(0.5) - std::tanh(0.2)));
  CHECK_THROWS(build_binary_tree(TreeModelSpec{0}));
}

TEST_CASE("linear-Gaussian moments match closed form") {
  const ProgramGraph g = build_binary_tree(tree_preset(TreeLinkKind::Linear, 2));
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::vector<int> offsets;
  metrics::linear_gaussian_joint(g, mean, cov, offsets);
  Rng rng(12);
  const int n = 100000;
  std::vector<std::string> names;
  for (const Node& node : g.nodes()) names.push_back(node.name);
  Eigen::MatrixXd s(n, static_cast<Eigen::Index>(names.size()));
  for (int i = 0; i < n; ++i) {
    const Assignment a = ancestral_sample(g, rng);
    for (std::size_t j = 0; j < names.size(); ++j) s(i, offsets[j]) = a.at(names[j])(0);
  }
  const Eigen::VectorXd m = s.colwise().mean();
  const Eigen::MatrixXd c = (s.rowwise() - m.transpose()).transpose() * (s.rowwise() - m.transpose()) / (n - 1);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    CHECK(std::abs(m(i) - mean(i)) < 3 * std::sqrt(cov(i, i) / n));
    for (Eigen::Index j = 0; j < m.size(); ++j) {
      const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n);
      CHECK(std::abs(c(i, j) - cov(i, j)) < 3 * se);
    }
  }
}

TEST_CASE("rnn drift") {
  Rng a(5), b(5);
  const RecurrentDrift r1 = build_rnn_drift(a), r2 = build_rnn_drift(b);
  CHECK(r1.w1 == r2.w1);
  CHECK(r1.w3 == r2.w3);
  CHECK(r1.w1.rows() == 5);
  CHECK(r1.w1.cols() == 2);
  CHECK(r1.w3.rows() == 2);

  SdeModelSpec spec = sde_preset(SdeModelKind::Recurrent);
  spec.rnn = r1;
  for (double x : {-50.0, -1.0, 0.0, 3.0, 80.0}) {
    const Eigen::VectorXd d = sde_drift(spec, vec({x, -x}));
    CHECK(d.cwiseAbs().maxCoeff() < 1.0);
  }
  spec.rnn.w1.setZero();
  spec.rnn.w2.setZero();
  spec.rnn.w3.setZero();
  spec.rnn.b1.setZero();
  spec.rnn.b2.setZero();
  CHECK(sde_drift(spec, vec({0.4, 9})).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("graph serialization round trip") {
  Rng rng(1);
  SdeModelSpec spec = sde_preset(SdeModelKind::Recurrent);
  spec.rnn = build_rnn_drift(rng);
  spec.horizon = 6;
  spec.emission = EmissionKind::Classification;
  const ProgramGraph g = attach_emissions(build_sde_model(spec), spec, 0, 3);
  const ProgramGraph back = graph_from_json(graph_to_json(g));
  CHECK(graph_to_json(back).dump() == graph_to_json(g).dump());
  CHECK(graph_hash(back) == graph_hash(g));
  Rng r1(7), r2(7);
  const Assignment a = ancestral_sample(g, r1), b = ancestral_sample(back, r2);
  for (const auto& [name, v] : a) CHECK((v.array() == b.at(name).array()).all());
  CHECK(joint_log_density(g, a) == joint_log_density(back, a));

  const ProgramGraph tree = build_binary_tree(tree_preset(TreeLinkKind::Tanh, 2));
  CHECK(graph_hash(graph_from_json(graph_to_json(tree))) == graph_hash(tree));
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}
