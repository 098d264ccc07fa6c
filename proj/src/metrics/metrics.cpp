#include "cflow/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cflow/diff/eval.hpp"
#include "cflow/diff/kernels.hpp"

namespace cflow::metrics {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

KdeEstimator kde_fit(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("kde_fit: need at least 2 samples");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / n);
  KdeEstimator k;
  k.samples.assign(samples.begin(), samples.end());
  k.bandwidth = std::max(0.9 * sd * std::pow(static_cast<double>(n), -0.2), kBandwidthFloor);
  return k;
}

double kde_logpdf(const KdeEstimator& kde, double v) {
  const double h = kde.bandwidth;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(kde.samples.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double u = (v - kde.samples[i]) / h;
    terms[i] = -0.5 * u * u;
    best = std::max(best, terms[i]);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc / static_cast<double>(terms.size())) - std::log(h) -
         diff::kernels::kHalfLog2Pi;
}

double latent_marginal_ll(const std::vector<Eigen::MatrixXd>& samples,
                          const std::vector<Eigen::VectorXd>& truth) {
  if (samples.size() != truth.size() || samples.empty()) {
    throw std::invalid_argument("latent_marginal_ll: shape mismatch");
  }
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < samples.size(); ++t) {
    if (samples[t].cols() != truth[t].size()) {
      throw std::invalid_argument("latent_marginal_ll: shape mismatch");
    }
    for (Eigen::Index j = 0; j < samples[t].cols(); ++j) {
      const Eigen::VectorXd col = samples[t].col(j);
      total += kde_logpdf(kde_fit(std::span<const double>(col.data(), col.size())), truth[t](j));
      ++count;
    }
  }
  return total / count;
}

double latent_marginal_ll(const std::map<std::string, Eigen::MatrixXd>& samples,
                          const Assignment& truth, const std::vector<std::string>& names) {
  std::vector<Eigen::MatrixXd> s;
  std::vector<Eigen::VectorXd> t;
  for (const std::string& n : names) {
    auto si = samples.find(n);
    auto ti = truth.find(n);
    if (si == samples.end() || ti == truth.end()) {
      throw std::invalid_argument("latent_marginal_ll: missing node '" + n + "'");
    }
    s.push_back(si->second);
    t.push_back(ti->second);
  }
  return latent_marginal_ll(s, t);
}

double predictive_ll(const ProgramGraph& g,
                     const std::map<std::string, Eigen::MatrixXd>& latent_samples,
                     const Assignment& truth, Rng& rng, PredictiveMode mode) {
  if (truth.empty()) throw std::invalid_argument("predictive_ll: no truth observations");
  diff::Eval ops;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double total = 0.0;
  int count = 0;
  for (int idx = 0; idx < static_cast<int>(g.size()); ++idx) {
    const Node& node = g.node(idx);
    auto ti = truth.find(node.name);
    if (ti == truth.end()) continue;
    if (node.dim != 1 || node.parents.size() != 1) {
      throw std::invalid_argument("predictive_ll: '" + node.name + "' is not a scalar emission");
    }
    auto si = latent_samples.find(node.parents[0]);
    if (si == latent_samples.end()) {
      throw std::invalid_argument("predictive_ll: no samples for '" + node.parents[0] + "'");
    }
    const Eigen::MatrixXd& xs = si->second;
    const Eigen::Index n = xs.rows();
    const double y = ti->second(0);
    std::vector<double> sims(n), logs(n);
    for (Eigen::Index s = 0; s < n; ++s) {
      const diff::Array x = xs.row(s).transpose();
      const FamilyParams<diff::Array> p = evaluate_link(ops, node.link, x);
      if (node.family == Family::Gaussian) {
        const double m = p.location(0, 0), sd = p.scale(0, 0);
        sims[s] = mode == PredictiveMode::Kde ? m + sd * normal(rng) : 0.0;
        logs[s] = -0.5 * kLog2Pi - std::log(sd) - 0.5 * ((y - m) / sd) * ((y - m) / sd);
      } else {
        const BernoulliLogitParams b{p.location(0, 0)};
        sims[s] = mode == PredictiveMode::Kde ? (bernoulli_sample(b, uniform(rng)) ? 1.0 : 0.0)
                                              : 0.0;
        logs[s] = bernoulli_logit_logpmf(y, b);
      }
    }
    if (mode == PredictiveMode::Kde) {
      total += kde_logpdf(kde_fit(sims), y);
    } else {
      const double best = *std::max_element(logs.begin(), logs.end());
      double acc = 0.0;
      for (double l : logs) acc += std::exp(l - best);
      total += best + std::log(acc / static_cast<double>(n));
    }
    ++count;
  }
  if (count != static_cast<int>(truth.size())) {
    throw std::invalid_argument("predictive_ll: truth names a node outside the graph");
  }
  return total / count;
}

double predictive_ll(const guides::Guide& guide, const ProgramGraph& g,
                     const Assignment& observations, const Assignment& truth, Rng& rng,
                     int n, PredictiveMode mode) {
  const auto samples = guides::sample_latents(guide, rng, n, observations);
  return predictive_ll(g, samples, truth, rng, mode);
}

namespace {

struct Fit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Fit fit_gaussian(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2 || samples.cols() < 1) {
    throw std::invalid_argument("gaussian fit: need >= 2 samples of dimension >= 1");
  }
  Fit f;
  f.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - f.mean.transpose();
  f.cov = centered.transpose() * centered / static_cast<double>(samples.rows());
  f.cov.diagonal().array() += kCovarianceJitter;
  return f;
}

}  // namespace

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& cov) {
  if (x.size() != mean.size() || cov.rows() != x.size() || cov.cols() != x.size()) {
    throw std::invalid_argument("gaussian_logpdf: shape mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("gaussian_logpdf: covariance is not positive definite");
  }
  const Eigen::VectorXd r = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (x.size() * kLog2Pi + logdet + r.squaredNorm());
}

double negative_entropy(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("negative_entropy: covariance is not positive definite");
  }
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (cov.rows() * (kLog2Pi + 1.0) + logdet);
}

double gaussian_fit_ll(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth) {
  const Fit f = fit_gaussian(samples);
  return gaussian_logpdf(truth, f.mean, f.cov);
}

double expected_gaussian_fit_ll(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& cov) {
  const Fit f = fit_gaussian(samples);
  Eigen::LLT<Eigen::MatrixXd> llt(f.cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("expected_gaussian_fit_ll: singular fitted covariance");
  }
  const double trace = llt.solve(cov).trace();
  return gaussian_logpdf(mean, f.mean, f.cov) - 0.5 * trace;
}

Eigen::VectorXd GaussianPosterior::node_mean(const ProgramGraph& g, const std::string& name) const {
  const int idx = g.index_of(name);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == idx) return mean.segment(offsets[i], g.node(idx).dim);
  }
  throw std::invalid_argument("GaussianPosterior: '" + name + "' is not latent");
}

Eigen::VectorXd GaussianPosterior::node_sd(const ProgramGraph& g, const std::string& name) const {
  const int idx = g.index_of(name);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == idx) {
      return cov.diagonal().segment(offsets[i], g.node(idx).dim).cwiseSqrt();
    }
  }
  throw std::invalid_argument("GaussianPosterior: '" + name + "' is not latent");
}

namespace {

// x = B x + c + S eps over all nodes in graph order.
struct LinearSystem {
  Eigen::MatrixXd A;  // I - B
  Eigen::VectorXd c, s;
  std::vector<int> offsets;
  int n = 0;
};

LinearSystem linear_system(const ProgramGraph& g) {
  LinearSystem sys;
  for (const Node& node : g.nodes()) {
    sys.offsets.push_back(sys.n);
    sys.n += node.dim;
  }
  sys.A = Eigen::MatrixXd::Identity(sys.n, sys.n);
  sys.c = Eigen::VectorXd::Zero(sys.n);
  sys.s = Eigen::VectorXd::Zero(sys.n);
  for (int j = 0; j < static_cast<int>(g.size()); ++j) {
    const Node& node = g.node(j);
    const int o = sys.offsets[j];
    if (node.family != Family::Gaussian) {
      throw std::invalid_argument("linear-Gaussian oracle: '" + node.name + "' is not Gaussian");
    }
    if (const auto* c = std::get_if<ConstantLink>(&node.link)) {
      sys.c.segment(o, node.dim) = c->location;
      sys.s.segment(o, node.dim) = c->scale;
    } else if (const auto* a = std::get_if<AffineLink>(&node.link)) {
      sys.c.segment(o, node.dim) = a->bias;
      sys.s.segment(o, node.dim) = a->scale;
      int col = 0;
      for (int p : g.parent_indices(j)) {
        const int pd = g.node(p).dim;
        sys.A.block(o, sys.offsets[p], node.dim, pd) -= a->weight.middleCols(col, pd);
        col += pd;
      }
    } else {
      throw std::invalid_argument("linear-Gaussian oracle: '" + node.name +
                                  "' has a non-affine link");
    }
  }
  return sys;
}

}  // namespace

void linear_gaussian_joint(const ProgramGraph& g, Eigen::VectorXd& mean, Eigen::MatrixXd& cov,
                           std::vector<int>& offsets) {
  topological_order(g);
  const LinearSystem sys = linear_system(g);
  const Eigen::MatrixXd inv = sys.A.inverse();
  mean = inv * sys.c;
  cov = inv * sys.s.array().square().matrix().asDiagonal() * inv.transpose();
  offsets = sys.offsets;
}

GaussianPosterior exact_linear_gaussian_posterior(const ProgramGraph& g,
                                                  const Assignment& observations) {
  topological_order(g);
  const LinearSystem sys = linear_system(g);
  const Eigen::VectorXd w = sys.s.array().square().inverse().matrix();
  const Eigen::MatrixXd lambda = sys.A.transpose() * w.asDiagonal() * sys.A;
  const Eigen::VectorXd eta = sys.A.transpose() * w.asDiagonal() * sys.c;

  GaussianPosterior post;
  std::vector<Eigen::Index> lat, obs;
  Eigen::VectorXd y;
  for (int j : g.latent_indices()) {
    post.nodes.push_back(j);
    post.offsets.push_back(static_cast<int>(lat.size()));
    for (int i = 0; i < g.node(j).dim; ++i) lat.push_back(sys.offsets[j] + i);
  }
  for (int j : g.observed_indices()) {
    auto it = observations.find(g.node(j).name);
    if (it == observations.end() || it->second.size() != g.node(j).dim) {
      throw std::invalid_argument("exact posterior: missing observation '" + g.node(j).name + "'");
    }
    y.conservativeResize(y.size() + g.node(j).dim);
    y.tail(g.node(j).dim) = it->second;
    for (int i = 0; i < g.node(j).dim; ++i) obs.push_back(sys.offsets[j] + i);
  }
  const Eigen::MatrixXd l_ll = lambda(lat, lat);
  Eigen::VectorXd rhs = eta(lat);
  if (!obs.empty()) rhs -= lambda(lat, obs) * y;
  Eigen::LLT<Eigen::MatrixXd> llt(l_ll);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("exact posterior: precision is not positive definite");
  }
  post.mean = llt.solve(rhs);
  post.cov = llt.solve(Eigen::MatrixXd::Identity(l_ll.rows(), l_ll.cols()));
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  return post;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

Eigen::MatrixXd stack_samples(const std::map<std::string, Eigen::MatrixXd>& samples,
                              const std::vector<std::string>& names) {
  Eigen::Index rows = -1, cols = 0;
  for (const std::string& n : names) {
    const Eigen::MatrixXd& m = samples.at(n);
    if (rows >= 0 && m.rows() != rows) throw std::invalid_argument("stack_samples: ragged");
    rows = m.rows();
    cols += m.cols();
  }
  Eigen::MatrixXd out(std::max<Eigen::Index>(rows, 0), cols);
  Eigen::Index c = 0;
  for (const std::string& n : names) {
    const Eigen::MatrixXd& m = samples.at(n);
    out.middleCols(c, m.cols()) = m;
    c += m.cols();
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

MetricReport MetricReport::from_values(std::string kind, std::vector<double> values) {
  MetricReport r;
  r.kind = std::move(kind);
  r.values = std::move(values);
  const std::size_t n = r.values.size();
  if (n == 0) {
    r.mean = std::numeric_limits<double>::quiet_NaN();
    r.sem = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / n;
  if (n > 1) {
    double ss = 0.0;
    for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
    r.sem = std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
  }
  return r;
}

std::string MetricReport::csv_row(const std::string& experiment, const std::string& guide,
                                  const std::string& config_hash) const {
  return experiment + "," + guide + "," + kind + "," + format_double(mean) + "," +
         format_double(sem) + "," + std::to_string(values.size()) + "," + config_hash;
}

}  // namespace cflow::metrics
