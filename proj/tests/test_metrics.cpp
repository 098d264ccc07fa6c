#include <doctest.h>

#include <algorithm>

#include "cflow/metrics/metrics.hpp"
#include "cflow/program/models.hpp"
#include "helpers.hpp"

using namespace cflow;
using namespace cflow::metrics;
using testing::vec;

namespace {

std::vector<double> normals(Rng& rng, int n, double m = 0, double s = 1) {
  std::normal_distribution<double> d(m, s);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Eigen::MatrixXd mvn_samples(Rng& rng, int n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd l = cov.llt().matrixL();
  std::normal_distribution<double> d(0, 1);
  Eigen::MatrixXd out(n, mean.size());
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd xi(mean.size());
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = d(rng);
    out.row(i) = (mean + l * xi).transpose();
  }
  return out;
}

// Conditions the dense joint of a linear-Gaussian graph on its observed nodes.
void brute_force(const ProgramGraph& g, const Assignment& obs, Eigen::VectorXd& mean,
                 Eigen::MatrixXd& cov, std::vector<int>& latent_offsets) {
  Eigen::VectorXd m;
  Eigen::MatrixXd c;
  std::vector<int> offsets;
  linear_gaussian_joint(g, m, c, offsets);
  std::vector<int> li, oi;
  Eigen::VectorXd yv(0);
  for (int j : topological_order(g)) {
    const Node& n = g.node(j);
    for (int k = 0; k < n.dim; ++k) {
      if (n.observed) {
        oi.push_back(offsets[j] + k);
        yv.conservativeResize(yv.size() + 1);
        yv(yv.size() - 1) = obs.at(n.name)(k);
      } else {
        li.push_back(offsets[j] + k);
      }
    }
  }
  auto sub = [&](const std::vector<int>& r, const std::vector<int>& cidx) {
    Eigen::MatrixXd s(r.size(), cidx.size());
    for (std::size_t a = 0; a < r.size(); ++a)
      for (std::size_t b = 0; b < cidx.size(); ++b) s(a, b) = c(r[a], cidx[b]);
    return s;
  };
  Eigen::VectorXd ml(li.size()), mo(oi.size());
  for (std::size_t a = 0; a < li.size(); ++a) ml(a) = m(li[a]);
  for (std::size_t a = 0; a < oi.size(); ++a) mo(a) = m(oi[a]);
  const Eigen::MatrixXd k = sub(li, oi) * sub(oi, oi).inverse();
  mean = ml + k * (yv - mo);
  cov = sub(li, li) - k * sub(oi, li);
  latent_offsets = li;
}

}  // namespace

TEST_CASE("kde bandwidth") {
  std::vector<double> pm(5000);
  for (int i = 0; i < 5000; ++i) pm[i] = i % 2 ? 1.0 : -1.0;
  CHECK(kde_fit(pm).bandwidth == doctest::Approx(0.9 * std::pow(5000.0, -0.2)).epsilon(1e-12));
  CHECK(std::abs(kde_fit(pm).bandwidth - 0.16385) < 1e-5);
  const std::vector<double> two{0, 2};
  const KdeEstimator k = kde_fit(two);
  CHECK(k.bandwidth == doctest::Approx(0.9 * std::pow(2.0, -0.2)).epsilon(1e-12));
  CHECK(kde_logpdf(k, 1.0) == doctest::Approx(-1.4895).epsilon(1e-4));
  const std::vector<double> same(10, 0.0);
  const KdeEstimator point = kde_fit(same);
  CHECK(point.bandwidth == kBandwidthFloor);
  CHECK(kde_logpdf(point, 0.0) == doctest::Approx(-0.5 * std::log(2 * M_PI) - std::log(1e-6)));
  const std::vector<double> one{1.0};
  CHECK_THROWS(kde_fit(one));
}

TEST_CASE("kde density integrates to one and is exchangeable") {
  Rng rng(1);
  std::vector<double> s = normals(rng, 300, 0.5, 2.0);
  const KdeEstimator k = kde_fit(s);
  double total = 0;
  const double h = 1e-3;
  for (double v = -15; v < 15; v += h) total += std::exp(kde_logpdf(k, v)) * h;
  CHECK(std::abs(total - 1.0) < 1e-3);
  std::vector<double> r = s;
  std::reverse(r.begin(), r.end());
  CHECK(kde_logpdf(kde_fit(r), 0.3) == doctest::Approx(kde_logpdf(k, 0.3)).epsilon(1e-13));
  CHECK(std::abs(kde_logpdf(k, 0.3) - kde_logpdf(k, 0.3 + 1e-9)) < 1e-7);
}

TEST_CASE("latent marginal log likelihood") {
  Rng rng(2);
  std::map<std::string, Eigen::MatrixXd> samples;
  Eigen::MatrixXd m(5000, 1);
  for (int i = 0; i < 5000; ++i) m(i) = normals(rng, 1)[0];
  samples["x"] = m;
  const double at_zero = latent_marginal_ll(samples, {{"x", vec({0})}}, {"x"});
  CHECK(std::abs(at_zero + 0.9189) < 0.02);
  const double tail = latent_marginal_ll(samples, {{"x", vec({10})}}, {"x"});
  CHECK(std::isfinite(tail));
  CHECK(tail < -20);
  Eigen::MatrixXd flipped = m.colwise().reverse();
  samples["x"] = flipped;
  CHECK(latent_marginal_ll(samples, {{"x", vec({0})}}, {"x"}) == doctest::Approx(at_zero).epsilon(1e-12));

  // the vector form averages over time and dimension
  std::vector<Eigen::MatrixXd> per_t{Eigen::MatrixXd(m.rows(), 2), m};
  per_t[0] << m, m;
  const double avg = latent_marginal_ll(per_t, {vec({0, 0}), vec({0})});
  CHECK(avg == doctest::Approx(at_zero).epsilon(1e-12));
  CHECK_THROWS(latent_marginal_ll(per_t, {vec({0}), vec({0})}));
}

TEST_CASE("predictive log likelihood") {
  SdeModelSpec spec = sde_preset(SdeModelKind::Brownian);
  spec.horizon = 2;
  spec.noise_sd = 1.0;
  const ProgramGraph g = attach_emissions(build_sde_model(spec), spec, 0, 2);
  std::map<std::string, Eigen::MatrixXd> s;
  s["x0"] = Eigen::MatrixXd::Constant(5000, 1, 0.7);
  s["x1"] = Eigen::MatrixXd::Constant(5000, 1, -0.2);
  Rng rng(3);
  const double v = predictive_ll(g, s, {{"y1", vec({-0.2})}}, rng, PredictiveMode::Kde);
  CHECK(std::abs(v + 0.93) < 0.05);
  CHECK_THROWS(predictive_ll(g, s, {{"nope", vec({0})}}, rng, PredictiveMode::Kde));

  spec.emission = EmissionKind::Classification;
  const ProgramGraph c = attach_emissions(build_sde_model(spec), spec, 0, 2);
  s["x1"] = Eigen::MatrixXd::Zero(5000, 1);
  CHECK(predictive_ll(c, s, {{"y1", vec({1})}}, rng, PredictiveMode::Mixture) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  s["x1"] = Eigen::MatrixXd::Constant(5000, 1, 3.0);
  CHECK(predictive_ll(c, s, {{"y1", vec({1})}}, rng, PredictiveMode::Kde) > 0.0);
}

TEST_CASE("gaussian fit") {
  Rng rng(4);
  const Eigen::MatrixXd s = mvn_samples(rng, 5000, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  CHECK(std::abs(gaussian_fit_ll(s, vec({0, 0})) + 1.8379) < 0.05);

  const Eigen::VectorXd mu = s.colwise().mean().transpose();
  const Eigen::MatrixXd centered = s.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / 5000.0 +
                              kCovarianceJitter * Eigen::MatrixXd::Identity(2, 2);
  CHECK(gaussian_fit_ll(s, mu) == doctest::Approx(-0.5 * std::log((2 * M_PI * cov).determinant())));
  CHECK(gaussian_fit_ll(s, mu) > gaussian_fit_ll(s, mu + vec({0.1, 0})));

  const Eigen::Matrix2d a{{2, 0.5}, {0, 1.5}};
  const Eigen::Vector2d b{1, -3};
  const Eigen::MatrixXd t = (s * a.transpose()).rowwise() + b.transpose();
  const Eigen::VectorXd truth = vec({0.3, -0.4});
  CHECK(gaussian_fit_ll(t, a * truth + b) ==
        doctest::Approx(gaussian_fit_ll(s, truth) - std::log(a.determinant())).epsilon(1e-5));
}

TEST_CASE("expected gaussian fit and entropy") {
  Rng rng(5);
  const Eigen::Matrix2d cov{{1.0, 0.3}, {0.3, 0.5}};
  const Eigen::VectorXd mean = vec({0.2, -1});
  const Eigen::MatrixXd s = mvn_samples(rng, 3000, vec({0.1, -0.9}), 0.8 * cov);
  const Eigen::MatrixXd truths = mvn_samples(rng, 40000, mean, cov);
  double mc = 0;
  for (int i = 0; i < truths.rows(); ++i) mc += gaussian_fit_ll(s, truths.row(i).transpose());
  mc /= truths.rows();
  CHECK(expected_gaussian_fit_ll(s, mean, cov) == doctest::Approx(mc).epsilon(2e-3));
  CHECK(negative_entropy(cov) == doctest::Approx(-0.5 * std::log((2 * M_PI * M_E * cov).determinant())));
  CHECK(gaussian_logpdf(vec({0}), vec({0}), Eigen::MatrixXd::Identity(1, 1)) ==
        doctest::Approx(-0.9189385));
}

TEST_CASE("exact posterior oracles") {
  const GaussianPosterior c = exact_linear_gaussian_posterior(testing::conjugate(), {{"y", vec({2})}});
  CHECK(c.mean(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(c.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  const ProgramGraph tree = build_binary_tree(tree_preset(TreeLinkKind::Linear, 1));
  const double child = 0.7;
  const GaussianPosterior t = exact_linear_gaussian_posterior(tree, {{tree_node_name(1, 0), vec({child})}});
  CHECK(t.node_mean(tree, tree_node_name(0, 0))(0) == doctest::Approx(0.3902 * child).epsilon(1e-4));
  CHECK(t.node_mean(tree, tree_node_name(0, 1))(0) == doctest::Approx(-0.3902 * child).epsilon(1e-4));

  SdeModelSpec spec = sde_preset(SdeModelKind::Brownian);
  spec.horizon = 3;
  ProgramGraph br = attach_emissions(build_sde_model(spec), spec, 1, 2);
  const Assignment obs{{emission_name(1), vec({1.3})}};
  Eigen::VectorXd bm;
  Eigen::MatrixXd bc;
  std::vector<int> offs;
  brute_force(br, obs, bm, bc, offs);
  const GaussianPosterior e = exact_linear_gaussian_posterior(br, obs);
  CHECK((e.mean - bm).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((e.cov - bc).cwiseAbs().maxCoeff() < 1e-10);

  ProgramGraph tanh_tree = build_binary_tree(tree_preset(TreeLinkKind::Tanh, 1));
  CHECK_THROWS(exact_linear_gaussian_posterior(tanh_tree, {{tree_node_name(1, 0), vec({1})}}));
}

TEST_CASE("exact posterior agrees with dense conditioning on random graphs") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(0.3, 1.5);
    ProgramGraph g;
    const int latent = 2 + static_cast<int>(seed % 6);
    std::vector<std::string> names;
    for (int i = 0; i < latent; ++i) {
      const std::string name = "z" + std::to_string(i);
      const int dim = 1 + static_cast<int>((seed + i) % 2);
      Node node;
      node.name = name;
      node.dim = dim;
      std::vector<std::string> parents;
      for (int p = 0; p < i; ++p) if (u(rng) < 0.8) parents.push_back(names[p]);
      node.parents = parents;
      int in = 0;
      for (const auto& p : parents) in += g.node(p).dim;
      Eigen::VectorXd sd(dim), bias(dim);
      for (int k = 0; k < dim; ++k) { sd(k) = u(rng); bias(k) = n(rng); }
      if (parents.empty()) {
        node.link = ConstantLink{bias, sd};
      } else {
        Eigen::MatrixXd w(dim, in);
        for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = n(rng);
        node.link = AffineLink{w, bias, sd};
      }
      g.add_node(node);
      names.push_back(name);
    }
    auto emission = [&](const std::string& name, const std::string& parent, double w, double sd) {
      Node y;
      y.name = name;
      y.parents = {parent};
      y.observed = true;
      y.link = AffineLink{Eigen::MatrixXd::Constant(1, g.node(parent).dim, w), vec({0.2}), vec({sd})};
      g.add_node(y);
    };
    emission("y0", names.back(), 1.0, 0.5);
    emission("y1", names.front(), 0.8, 0.7);
    const Assignment obs{{"y0", vec({n(rng)})}, {"y1", vec({n(rng)})}};
    Eigen::VectorXd bm;
    Eigen::MatrixXd bc;
    std::vector<int> offs;
    brute_force(g, obs, bm, bc, offs);
    const GaussianPosterior e = exact_linear_gaussian_posterior(g, obs);
    CAPTURE(seed);
    CHECK((e.mean - bm).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((e.cov - bc).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("exact samples score close to the exact marginal density") {
  SdeModelSpec spec = sde_preset(SdeModelKind::Brownian);
  spec.horizon = 10;
  const ProgramGraph g = attach_emissions(build_sde_model(spec), spec, 0, 5);
  Rng data(6);
  const Assignment truth = ancestral_sample(g, data);
  Assignment obs;
  for (int t = 0; t < 5; ++t) obs[emission_name(t)] = truth.at(emission_name(t));
  const GaussianPosterior post = exact_linear_gaussian_posterior(g, obs);
  const Eigen::MatrixXd draws = mvn_samples(data, 5000, post.mean, post.cov);
  std::map<std::string, Eigen::MatrixXd> s;
  std::vector<std::string> names;
  double exact = 0;
  for (std::size_t i = 0; i < post.nodes.size(); ++i) {
    const std::string& name = g.node(post.nodes[i]).name;
    names.push_back(name);
    s[name] = draws.middleCols(post.offsets[i], 1);
    exact += normal_logpdf(truth.at(name), {post.node_mean(g, name), post.node_sd(g, name)});
  }
  exact /= static_cast<double>(names.size());
  CHECK(std::abs(latent_marginal_ll(s, truth, names) - exact) < 0.05);
}

TEST_CASE("ks statistic") {
  Rng rng(7);
  const auto a = normals(rng, 2000), b = normals(rng, 2000);
  CHECK(ks_statistic(a, a) == 0.0);
  CHECK(ks_statistic(a, b) < 0.05);
  CHECK(ks_statistic({0, 1, 2}, {10, 11}) == 1.0);
  CHECK(ks_statistic(a, normals(rng, 2000, 1.0)) > 0.3);
}

TEST_CASE("metric reports") {
  const MetricReport r = MetricReport::from_values("Latent", {1.0, 2.0, 4.0});
  CHECK(r.mean == doctest::Approx(7.0 / 3));
  const double sd = std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                               (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2);
  CHECK(r.sem == doctest::Approx(sd / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(MetricReport::from_values("x", {3.0}).sem == 0.0);
  CHECK(r.csv_row("BR-r", "CF", "abc") == "BR-r,CF,Latent,2.333333," + format_double(r.sem) + ",3,abc");
  const MetricReport empty = MetricReport::from_values("x", {});
  CHECK(std::isnan(empty.mean));
  CHECK(format_double(-0.5) == "-0.500000");
}
