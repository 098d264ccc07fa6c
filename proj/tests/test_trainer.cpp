#include <doctest.h>

#include "cflow/metrics/metrics.hpp"
#include "cflow/program/models.hpp"
#include "cflow/train/trainer.hpp"
#include "helpers.hpp"

using namespace cflow;
using namespace cflow::train;
using guides::Guide;
using guides::GuideKind;
using testing::vec;

namespace {

const Assignment kY2{{"y", vec({2.0})}};

Guide make(const ProgramGraph& g, GuideKind kind, guides::GuideOptions o = {}) {
  Rng rng(0);
  return Guide(g, kind, o, rng);
}

std::vector<double> column(const Eigen::MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.rows());
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.iterations = 0;
  CHECK_THROWS(validate(c));
  c = {};
  c.learning_rate = 0;
  CHECK_THROWS(validate(c));
  c = {};
  c.samples = 0;
  CHECK_THROWS(validate(c));
}

TEST_CASE("adam steps") {
  diff::ParamStore p;
  p.create("w", vec({0.5, -1}));
  AdamState s;
  TrainConfig c;
  c.learning_rate = 0.01;
  p.zero_grad();
  adam_step(p, s, c);
  CHECK(p.value("w") == vec({0.5, -1}));

  p.at("w").grad = vec({3.0, -0.2});
  AdamState fresh;
  adam_step(p, fresh, c);
  // ascent: the first bias-corrected step moves each coordinate by lr along the gradient sign
  CHECK(p.value("w")(0) - 0.5 == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p.value("w")(1) + 1.0 == doctest::Approx(-0.01).epsilon(1e-5));
  CHECK(fresh.step == 1);
}

TEST_CASE("training is deterministic") {
  const ProgramGraph g = testing::three_node();
  TrainConfig c;
  c.iterations = 150;
  c.seed = 17;
  for (GuideKind k : {GuideKind::MF, GuideKind::CF, GuideKind::GF}) {
    Guide a = make(g, k), b = make(g, k);
    const TrainTrace ta = train::train(a, kY2, c), tb = train::train(b, kY2, c);
    CHECK(ta.elbo == tb.elbo);
    for (const auto& [name, e] : a.params()) {
      CHECK((e.value.array() == b.params().value(name).array()).all());
    }
    CHECK(ta.elbo.size() == 150);
  }
}

TEST_CASE("mean field recovers the conjugate posterior") {
  Guide mf = make(testing::conjugate(), GuideKind::MF);
  TrainConfig c;
  c.iterations = 4000;
  const TrainTrace t = train::train(mf, kY2, c);
  const double mu = mf.params().value("mf/x/mean")(0);
  const double sd = diff::kernels::softplus(mf.params().value("mf/x/raw_scale"))(0);
  CHECK(std::abs(mu - 1.0) < 0.05);
  CHECK(std::abs(sd - std::sqrt(0.5)) < 0.05);

  const auto smooth_elbo = smooth(t.elbo, 200);
  const std::size_t half = smooth_elbo.size() / 2;
  double running = smooth_elbo[half];
  for (std::size_t i = half; i < smooth_elbo.size(); ++i) {
    CHECK(smooth_elbo[i] > running - 0.5);
    running = std::max(running, smooth_elbo[i]);
  }
}

TEST_CASE("cascading flow matches the conjugate posterior density") {
  Guide cf = make(testing::conjugate(), GuideKind::CF);
  TrainConfig c;
  c.iterations = 20000;
  c.samples = 20;
  train::train(cf, kY2, c);
  Rng rng(1);
  const auto s = sample_latents(cf, rng, 5000, kY2);
  const metrics::KdeEstimator kde = metrics::kde_fit(column(s.at("x")));
  // posterior N(1, 1/2) evaluated at a few ground-truth positions
  for (double truth : {0.4, 1.0, 1.5}) {
    const double exact = normal_logpdf(vec({truth}), {vec({1}), vec({std::sqrt(0.5)})});
    CAPTURE(truth);
    CHECK(std::abs(metrics::kde_logpdf(kde, truth) - exact) < 0.1);
  }
  for (double l : cf.gate_values()) {
    CHECK(l > 0.0);
    CHECK(l < 1.0);
  }
}

TEST_CASE("multivariate normal is at least as good as mean field") {
  const ProgramGraph g = build_binary_tree(tree_preset(TreeLinkKind::Linear, 2));
  Rng data(4);
  const Assignment a = ancestral_sample(g, data);
  const Assignment obs{{tree_node_name(2, 0), a.at(tree_node_name(2, 0))}};
  TrainConfig c;
  c.iterations = 3000;
  c.learning_rate = 0.01;
  Guide mf = make(g, GuideKind::MF), mvn = make(g, GuideKind::MVN);
  train::train(mf, obs, c);
  train::train(mvn, obs, c);
  Rng r1(5), r2(6);
  const auto vm = elbo_samples(mf, obs, 4000, r1), vn = elbo_samples(mvn, obs, 4000, r2);
  const double se = std::sqrt(testing::variance(vm) / vm.size() + testing::variance(vn) / vn.size());
  CHECK(testing::mean(vn) >= testing::mean(vm) - 2 * se);
}

TEST_CASE("non-finite objectives raise a divergence error with the trace") {
  Guide mf = make(testing::conjugate(), GuideKind::MF);
  mf.params().set_value("mf/x/mean", vec({std::nan("")}));
  TrainConfig c;
  c.iterations = 500;
  try {
    train::train(mf, kY2, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.trace().elbo.size() == 50);
    for (double v : e.trace().elbo) CHECK(std::isnan(v));
  }
}

TEST_CASE("trace csv") {
  TrainTrace t;
  t.elbo = {-3.5, std::nan("")};
  t.seconds = {0.1, 0.2};
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("iteration,elbo,seconds\n", 0) == 0);
  CHECK(csv.find("\n0,") != std::string::npos);
  CHECK(csv.find("\n1,nan,") != std::string::npos);
}

TEST_CASE("amortized training improves on fresh data") {
  SdeModelSpec spec = sde_preset(SdeModelKind::Brownian);
  spec.horizon = 6;
  const ProgramGraph g = attach_emissions(build_sde_model(spec), spec, 0, 6);
  const ObservationSource source = [&](Rng& rng) {
    const Assignment a = ancestral_sample(g, rng);
    Assignment o;
    for (int j : g.observed_indices()) o[g.node(j).name] = a.at(g.node(j).name);
    return o;
  };
  guides::GuideOptions o;
  o.amortized = true;
  for (GuideKind k : {GuideKind::MF, GuideKind::CF}) {
    Guide guide = make(g, k, o);
    TrainConfig c;
    c.iterations = 1500;
    c.learning_rate = 0.005;
    const TrainTrace t = train_amortized(guide, source, c);
    const auto s = smooth(t.elbo, 200);
    CHECK(s.back() > s[199] + 1.0);
    Guide again = make(g, k, o);
    CHECK(train_amortized(again, source, c).elbo == t.elbo);
  }
}
