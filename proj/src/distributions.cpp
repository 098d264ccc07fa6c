#include "cflow/distributions.hpp"

#include <stdexcept>

namespace cflow {

namespace {

void check_normal(const DiagNormalParams& p, Eigen::Index n, const char* op) {
  if (p.mean.size() != n || p.scale.size() != n) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch");
  }
}

}  // namespace

double normal_logpdf(const Eigen::VectorXd& v, const DiagNormalParams& p) {
  check_normal(p, v.size(), "normal_logpdf");
  return diff::kernels::gaussian_logpdf(v, p.mean, p.scale);
}

Eigen::VectorXd normal_rsample(const DiagNormalParams& p,
                               const Eigen::VectorXd& noise) {
  check_normal(p, noise.size(), "normal_rsample");
  return p.mean + p.scale.cwiseProduct(noise);
}

double bernoulli_logit_logpmf(double y, const BernoulliLogitParams& p) {
  if (y == 1.0) return -diff::kernels::softplus(-p.logit);
  if (y == 0.0) return -diff::kernels::softplus(p.logit);
  throw std::invalid_argument("bernoulli_logit_logpmf: y must be 0 or 1");
}

int bernoulli_sample(const BernoulliLogitParams& p, double u) {
  return u < diff::kernels::sigmoid(p.logit) ? 1 : 0;
}

}  // namespace cflow
