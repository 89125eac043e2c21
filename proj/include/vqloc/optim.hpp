#pragma once

// AdamW with decoupled weight decay and a warmup + linear-decay schedule.

#include <cmath>
#include <cstdint>

#include "vqloc/errors.hpp"
#include "vqloc/tensor.hpp"

namespace vqloc {

struct ScheduleConfig {
  int iterations = 2000;
  int warmup_iters = 100;
  double peak_lr = 1e-3;

  void validate() const {
    if (iterations < 1) throw ConfigError("schedule: iterations must be >= 1");
    if (warmup_iters < 0 || warmup_iters > iterations) throw ConfigError("schedule: warmup must lie in [0, iterations]");
    if (peak_lr < 0) throw ConfigError("schedule: peak lr must be >= 0");
  }
};

/// 0 -> peak over [0, warmup], then peak -> 0 at `iterations`.
inline double lr_at(int iter, const ScheduleConfig& cfg) {
  if (iter < 0) throw ConfigError("lr_at: negative iteration");
  if (iter < cfg.warmup_iters) return cfg.peak_lr * iter / cfg.warmup_iters;
  if (iter >= cfg.iterations) return 0.0;
  const int decay = cfg.iterations - cfg.warmup_iters;
  return cfg.peak_lr * static_cast<double>(cfg.iterations - iter) / decay;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam: betas must lie in [0, 1)");
    if (eps <= 0 || weight_decay < 0) throw ConfigError("adam: eps must be > 0 and weight decay >= 0");
  }
};

template <class S>
struct AdamState {
  ParameterSet<S> m, v;
  std::int64_t step = 0;  // applied steps; drives bias correction
  std::int64_t skipped = 0;

  static AdamState init(const ParameterSet<S>& params) { return {params.zeros_like(), params.zeros_like(), 0, 0}; }
};

/// Returns false, leaving params and state untouched apart from the skip
/// counter, when any gradient is non-finite.
template <class S>
bool optimizer_step(ParameterSet<S>& params, const ParameterSet<S>& grads, AdamState<S>& st, const AdamConfig& cfg,
                    double lr) {
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw ConfigError("optimizer: parameter/gradient layout mismatch");
  if (!grads.all_finite()) {
    ++st.skipped;
    return false;
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);
  const S eps = static_cast<S>(cfg.eps);
  const S decay = static_cast<S>(1.0 - lr * cfg.weight_decay);
  for (int i = 0; i < static_cast<int>(params.size()); ++i) {
    const Mat<S>& g = grads[i];
    if (g.rows() != params[i].rows() || g.cols() != params[i].cols())
      throw ConfigError("optimizer: gradient shape mismatch for '" + params.name(i) + "'");
    Mat<S>& m = st.m[i];
    Mat<S>& v = st.v[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    params[i] *= decay;
    params[i].array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
  return true;
}

}  // namespace vqloc
