#include "cflow/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cflow/diff/grad.hpp"

namespace cflow::train {

void validate(const TrainConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
  if (!(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  }
  if (cfg.samples < 1) throw std::invalid_argument("TrainConfig: samples must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
      !(cfg.eps > 0.0)) {
    throw std::invalid_argument("TrainConfig: invalid Adam constants");
  }
  if (cfg.divergence_patience < 1) {
    throw std::invalid_argument("TrainConfig: divergence patience must be >= 1");
  }
}

void adam_step(diff::ParamStore& params, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, entry] : params) {
    auto [mi, fresh_m] = state.m.try_emplace(name, diff::Array::Zero(entry.value.rows(), entry.value.cols()));
    auto [vi, fresh_v] = state.v.try_emplace(name, diff::Array::Zero(entry.value.rows(), entry.value.cols()));
    diff::Array& m = mi->second;
    diff::Array& v = vi->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * entry.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * entry.grad.cwiseProduct(entry.grad);
    const auto m_hat = m.array() / c1;
    const auto v_hat = v.array() / c2;
    entry.value.array() += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
  }
}

std::string TrainTrace::to_csv() const {
  std::string out = "iteration,elbo,seconds\n";
  char buf[96];
  for (std::size_t i = 0; i < elbo.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.6f\n", i, elbo[i],
                  i < seconds.size() ? seconds[i] : 0.0);
    out += buf;
  }
  return out;
}

namespace {

bool grads_finite(const diff::ParamStore& params) {
  for (const auto& [name, entry] : params) {
    if (!entry.grad.allFinite()) return false;
  }
  return true;
}

template <class NextObservations>
TrainTrace run(guides::Guide& guide, const TrainConfig& cfg, NextObservations next) {
  validate(cfg);
  Rng rng(cfg.seed);
  AdamState state;
  TrainTrace trace;
  trace.elbo.reserve(cfg.iterations);
  trace.seconds.reserve(cfg.iterations);
  const auto start = std::chrono::steady_clock::now();
  int bad = 0;
  std::vector<guides::NoiseDraw> noise(cfg.samples);
  for (int it = 0; it < cfg.iterations; ++it) {
    const Assignment& obs = next(rng);
    for (auto& n : noise) n = guide.draw_noise(rng);
    const diff::LossFn loss = [&](diff::Tape& tape) {
      return guides::elbo_on_tape(tape, guide, obs, noise);
    };
    double value = std::numeric_limits<double>::quiet_NaN();
    try {
      value = diff::grad(loss, guide.params());
    } catch (const flow::FlowError&) {
      value = std::numeric_limits<double>::quiet_NaN();
    }
    const bool ok = std::isfinite(value) && grads_finite(guide.params());
    trace.elbo.push_back(ok ? value : std::numeric_limits<double>::quiet_NaN());
    trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (!ok) {
      if (++bad >= cfg.divergence_patience) {
        throw DivergenceError("training diverged: " + std::to_string(bad) +
                                  " consecutive non-finite ELBO steps at iteration " +
                                  std::to_string(it),
                              trace);
      }
      continue;
    }
    bad = 0;
    adam_step(guide.params(), state, cfg);
  }
  return trace;
}

}  // namespace

TrainTrace train(guides::Guide& guide, const Assignment& observations, const TrainConfig& cfg) {
  return run(guide, cfg, [&](Rng&) -> const Assignment& { return observations; });
}

TrainTrace train_amortized(guides::Guide& guide, const ObservationSource& source,
                           const TrainConfig& cfg) {
  Assignment current;
  return run(guide, cfg, [&](Rng& rng) -> const Assignment& {
    current = source(rng);
    return current;
  });
}

std::vector<double> smooth(const std::vector<double>& values, int window) {
  if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<std::size_t>(window)) sum -= values[i - window];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

}  // namespace cflow::train
