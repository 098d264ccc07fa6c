#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cflow/guides/guide.hpp"

namespace cflow::train {

struct TrainConfig {
  int iterations = 8000;
  double learning_rate = 0.001;
  int samples = 10;  // Monte Carlo draws per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int divergence_patience = 50;  // consecutive non-finite steps before giving up
};

void validate(const TrainConfig& cfg);

struct AdamState {
  std::map<std::string, diff::Array> m, v;
  long step = 0;
};

/// One bias-corrected Adam step in the ascent direction, using the gradient
/// slots of `params`.
void adam_step(diff::ParamStore& params, AdamState& state, const TrainConfig& cfg);

struct TrainTrace {
  std::vector<double> elbo;     // NaN where the step was skipped
  std::vector<double> seconds;  // wall clock since start
  std::string checkpoint;       // path of the final parameter snapshot, if written

  std::string to_csv() const;   // iteration,elbo,seconds
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const TrainTrace& trace() const { return trace_; }

 private:
  TrainTrace trace_;
};

/// Draws a fresh set of observations for amortized training.
using ObservationSource = std::function<Assignment(Rng&)>;

TrainTrace train(guides::Guide& guide, const Assignment& observations, const TrainConfig& cfg);
TrainTrace train_amortized(guides::Guide& guide, const ObservationSource& source,
                           const TrainConfig& cfg);

/// Moving average with the given window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& values, int window);

}  // namespace cflow::train
