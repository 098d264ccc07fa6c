#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflow/guides/guide.hpp"
#include "cflow/program/graph.hpp"

namespace cflow::metrics {

struct KdeEstimator {
  std::vector<double> samples;
  double bandwidth = 1.0;
};

inline constexpr double kBandwidthFloor = 1e-6;
inline constexpr double kCovarianceJitter = 1e-6;

/// Gaussian kernels with h = 0.9 * sd * N^(-1/5), sd the population SD.
KdeEstimator kde_fit(std::span<const double> samples);
double kde_logpdf(const KdeEstimator& kde, double v);

/// Mean over (t, j) of the KDE log density of each marginal at the truth.
/// samples[t] is N x J; truth[t] has length J.
double latent_marginal_ll(const std::vector<Eigen::MatrixXd>& samples,
                          const std::vector<Eigen::VectorXd>& truth);

/// Same, with samples and truth keyed by node name.
double latent_marginal_ll(const std::map<std::string, Eigen::MatrixXd>& samples,
                          const Assignment& truth, const std::vector<std::string>& names);

enum class PredictiveMode { Kde, Mixture };

/// For each emission node in `truth`, pushes the latent samples of its parent
/// through the emission density of `g` and scores the true value: KDE over
/// simulated observations, or the log of the mean likelihood.
double predictive_ll(const ProgramGraph& g,
                     const std::map<std::string, Eigen::MatrixXd>& latent_samples,
                     const Assignment& truth, Rng& rng, PredictiveMode mode);

/// Draws `n` latent samples from the guide, then scores as above.
double predictive_ll(const guides::Guide& guide, const ProgramGraph& g,
                     const Assignment& observations, const Assignment& truth, Rng& rng,
                     int n, PredictiveMode mode);

/// log N(truth; empirical mean, empirical covariance + jitter I).
double gaussian_fit_ll(const Eigen::MatrixXd& samples, const Eigen::VectorXd& truth);

/// E over truth ~ N(mean, cov) of log N(truth; fitted mean, fitted cov), for
/// the Gaussian fitted to `samples`.
double expected_gaussian_fit_ll(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& cov);

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& cov);
/// Negative entropy of N(., cov).
double negative_entropy(const Eigen::MatrixXd& cov);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::vector<int> nodes;    // latent nodes in topological order
  std::vector<int> offsets;  // start of each node in mean

  Eigen::VectorXd node_mean(const ProgramGraph& g, const std::string& name) const;
  Eigen::VectorXd node_sd(const ProgramGraph& g, const std::string& name) const;
};

/// Exact posterior of every latent given all observed nodes, by information
/// form elimination. Every node must be Gaussian with a constant or affine
/// link.
GaussianPosterior exact_linear_gaussian_posterior(const ProgramGraph& g,
                                                  const Assignment& observations);

/// Joint prior mean and covariance of all nodes (graph order), same
/// requirements.
void linear_gaussian_joint(const ProgramGraph& g, Eigen::VectorXd& mean, Eigen::MatrixXd& cov,
                           std::vector<int>& offsets);

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

/// Flattens latent samples (name keyed, N x dim each) into N x total in the
/// given node order.
Eigen::MatrixXd stack_samples(const std::map<std::string, Eigen::MatrixXd>& samples,
                              const std::vector<std::string>& names);

struct MetricReport {
  std::string kind;
  std::vector<double> values;
  double mean = 0.0;
  double sem = 0.0;  // sample SD / sqrt(reps); 0 for a single value

  static MetricReport from_values(std::string kind, std::vector<double> values);
  /// experiment,guide,metric,mean,sem,reps,config_hash
  std::string csv_row(const std::string& experiment, const std::string& guide,
                      const std::string& config_hash) const;
};

std::string format_double(double v);

}  // namespace cflow::metrics
