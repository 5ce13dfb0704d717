#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "weakloc/nn.hpp"
#include "weakloc/tape.hpp"

namespace weakloc {

// Geometric interpolation tau_start * (tau_end/tau_start)^(step/total); steps
// outside [0, total_steps] clamp to the endpoints, which keeps them exact.
struct TemperatureSchedule {
  double tau_start = 1.0;
  double tau_end = 0.001;
  int total_steps = 1;

  TemperatureSchedule() = default;
  TemperatureSchedule(double start, double end, int steps)
      : tau_start(start), tau_end(end), total_steps(steps) {
    if (!(tau_start >= tau_end) || !(tau_end > 0.0))
      throw config_error("temperature schedule requires tau_start >= tau_end > 0");
    if (total_steps < 1) throw config_error("temperature schedule requires total_steps >= 1");
  }
};

inline double tau_at(const TemperatureSchedule& s, int step) {
  if (step <= 0) return s.tau_start;
  if (step >= s.total_steps) return s.tau_end;
  return s.tau_start * std::pow(s.tau_end / s.tau_start, double(step) / double(s.total_steps));
}

inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-10, 1.0 - 1e-10);
  return -std::log(-std::log(u));
}

inline std::vector<double> gumbel_noise(Rng& rng, int n) {
  if (n < 1) throw config_error("gumbel_noise: n must be >= 1");
  std::vector<double> g(n);
  for (double& v : g) v = gumbel_from_uniform(uniform01(rng));
  return g;
}

// softmax((logits + g)/tau) with fresh Gumbel noise; differentiable w.r.t.
// the logits (the noise is a recorded constant).
inline Var gumbel_softmax(Var logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw config_error("gumbel_softmax: tau must be positive");
  Tape& t = *logits.tape;
  const Shape& s = t.shape(logits);
  if (s.size() != 1) throw shape_error("gumbel_softmax: expected vector, got " + shape_str(s));
  Var noise = t.constant(s, gumbel_noise(rng, s[0]));
  return softmax(scale(add(logits, noise), 1.0 / tau));
}

struct CategoricalSample {
  std::vector<double> soft;  // probability vector
  Var hard;                  // one-hot, straight-through backward
  int index = -1;            // argmax of soft, ties to the lowest index
};

// Forward emits the one-hot argmax; backward passes gradients through
// unchanged, as if the output were the soft sample.
inline CategoricalSample straight_through(Var soft) {
  Tape& t = *soft.tape;
  const Shape s = t.shape(soft);
  if (s.size() != 1) throw shape_error("straight_through: expected vector, got " + shape_str(s));
  const std::vector<double> sv = t.value(soft);  // copy: make() may relocate nodes
  int best = 0;
  for (std::size_t i = 1; i < sv.size(); ++i)
    if (sv[i] > sv[best]) best = int(i);
  std::vector<double> hard(sv.size(), 0.0);
  hard[best] = 1.0;
  const int is = soft.id, io = t.next_id();
  Var h = t.make(s, std::move(hard), {soft}, [is, io](Tape& t) {
    const auto& g = t.grad(io);
    auto& gs = t.grad(is);
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
  });
  return CategoricalSample{sv, h, best};
}

}  // namespace weakloc
