#pragma once

// Exact Gaussian-mixture diffusion.
//
// The data distribution is a mixture of isotropic Gaussians, one or more per
// concept, so the time-t marginal of the forward process is again a mixture
// with closed-form score. The reverse chain is DDPM ancestral sampling driven
// by that score, which makes every step checkable against an oracle.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdiff/error.hpp"
#include "cdiff/rng.hpp"

namespace cdiff {

// ---------------------------------------------------------------------------
// Noise schedule

class NoiseSchedule {
 public:
  /// Takes beta_1..beta_T. Throws if the chain does not end near pure noise.
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    require(!betas_.empty(), "noise schedule needs at least one step");
    alpha_bars_.reserve(betas_.size() + 1);
    alpha_bars_.push_back(1.0);
    for (double b : betas_) {
      require(b > 0.0 && b < 1.0, "beta must lie in (0, 1)");
      alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
    }
    if (alpha_bars_.back() > kMaxFinalAlphaBar) {
      fail(ErrorKind::domain, "chain does not reach noise: alpha_bar_T = " +
                                  std::to_string(alpha_bars_.back()) + " > 0.02");
    }
  }

  static constexpr double kMaxFinalAlphaBar = 0.02;

  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  /// 1-based, t in [1, T].
  double beta(int t) const { return betas_.at(check_step(t) - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }

  /// t in [0, T]; alpha_bar(0) == 1.
  double alpha_bar(int t) const {
    require(t >= 0 && t <= steps(), "alpha_bar index out of range");
    return alpha_bars_[static_cast<std::size_t>(t)];
  }

  /// Ancestral step std: sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t).
  double sigma(int t) const {
    const double var = beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
    return std::sqrt(std::max(0.0, var));
  }

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a("schedule");
    for (double b : betas_) h = mix64(h, std::bit_cast<std::uint64_t>(b));
    return h;
  }

 private:
  int check_step(int t) const {
    require(t >= 1 && t <= steps(), "step index out of range [1, T]");
    return t;
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// Linear beta ramp from beta_start to beta_end over T steps.
inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  require(steps >= 1, "schedule needs T >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

inline NoiseSchedule default_schedule() { return build_schedule(11, 0.1, 0.6); }

// ---------------------------------------------------------------------------
// Latent

struct Latent {
  std::vector<double> data;
  int width = 0;
  int height = 0;
  int step = 0;  // chain position: T = pure noise, 0 = finished sample

  Latent() = default;
  Latent(std::vector<double> values, int w, int h, int t)
      : data(std::move(values)), width(w), height(h), step(t) {
    require(w > 0 && h > 0, "latent dimensions must be positive");
    require(data.size() == static_cast<std::size_t>(w) * static_cast<std::size_t>(h),
            "latent data length must equal width * height");
    require(t >= 0, "latent step index must be non-negative");
  }

  std::size_t size() const noexcept { return data.size(); }

  friend bool operator==(const Latent&, const Latent&) = default;
};

// ---------------------------------------------------------------------------
// Mixture model and conditioning

struct MixtureComponent {
  std::string concept_id;
  double weight = 1.0;
  std::vector<double> mean;  // row-major, values in [0, 1]
  double sigma0 = 0.05;
};

class MixtureModel {
 public:
  MixtureModel(std::vector<MixtureComponent> components, int width, int height)
      : components_(std::move(components)), width_(width), height_(height) {
    require(!components_.empty(), "mixture needs at least one component");
    require(width > 0 && height > 0, "mixture dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    double total = 0.0;
    for (const auto& c : components_) {
      require(!c.concept_id.empty(), "mixture component needs a concept id");
      require(c.weight > 0.0, "mixture weights must be positive");
      require(c.sigma0 >= 0.0, "component sigma0 must be non-negative");
      require(c.mean.size() == n, "component mean has wrong dimensions");
      for (double v : c.mean) require(v >= 0.0 && v <= 1.0, "component mean outside [0, 1]");
      total += c.weight;
    }
    for (auto& c : components_) c.weight /= total;
    for (const auto& c : components_) {
      if (std::find(concepts_.begin(), concepts_.end(), c.concept_id) == concepts_.end())
        concepts_.push_back(c.concept_id);
    }
  }

  const std::vector<MixtureComponent>& components() const noexcept { return components_; }
  /// Distinct concept ids in first-appearance order.
  const std::vector<std::string>& concepts() const noexcept { return concepts_; }
  bool has_concept(const std::string& id) const {
    return std::find(concepts_.begin(), concepts_.end(), id) != concepts_.end();
  }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

 private:
  std::vector<MixtureComponent> components_;
  std::vector<std::string> concepts_;
  int width_;
  int height_;
};

/// Weighted subset of concepts enabled for a denoising phase.
struct Condition {
  std::vector<std::string> concepts;
  std::vector<double> weights;  // parallel to concepts, all > 0

  static Condition uniform(std::vector<std::string> ids) {
    Condition c;
    c.weights.assign(ids.size(), 1.0);
    c.concepts = std::move(ids);
    return c;
  }

  double weight_of(const std::string& id) const {
    for (std::size_t i = 0; i < concepts.size(); ++i)
      if (concepts[i] == id) return weights[i];
    return 0.0;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a("condition");
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      h = mix64(h, fnv1a(concepts[i]));
      h = mix64(h, std::bit_cast<std::uint64_t>(weights[i]));
    }
    return h;
  }

  friend bool operator==(const Condition&, const Condition&) = default;
};

inline void validate(const Condition& cond, const MixtureModel& mixture) {
  require(!cond.concepts.empty(), "condition enables no concepts");
  require(cond.weights.size() == cond.concepts.size(), "condition weights/concepts length mismatch");
  for (std::size_t i = 0; i < cond.concepts.size(); ++i) {
    require(mixture.has_concept(cond.concepts[i]),
            "condition references unknown concept '" + cond.concepts[i] + "'");
    require(cond.weights[i] > 0.0, "condition weights must be positive");
  }
}

// ---------------------------------------------------------------------------
// Forward process and score

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Latent forward_diffuse(const Latent& x0, int t, std::span<const double> eps,
                              const NoiseSchedule& schedule) {
  require(t >= 1 && t <= schedule.steps(), "forward_diffuse needs t in [1, T]");
  require(eps.size() == x0.size(), "noise length does not match latent");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
  Latent out = x0;
  out.step = t;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0.data[i] + b * eps[i];
  return out;
}

/// Gradient of log p_t at x, where p_t is the time-t marginal of the
/// condition-restricted mixture. Responsibilities use log-sum-exp.
inline std::vector<double> mixture_score(const Latent& x, int t, const MixtureModel& mixture,
                                         const Condition& cond, const NoiseSchedule& schedule) {
  require(t >= 1 && t <= schedule.steps(), "mixture_score needs t in [1, T]");
  require(x.size() == mixture.pixels(), "latent dimensions do not match mixture");
  validate(cond, mixture);

  const double abar = schedule.alpha_bar(t);
  const double root_abar = std::sqrt(abar);
  const double dim = static_cast<double>(x.size());

  struct Active {
    const MixtureComponent* comp;
    double var;
    double log_term;
  };
  std::vector<Active> active;
  active.reserve(mixture.components().size());
  double max_log = -INFINITY;
  for (const auto& comp : mixture.components()) {
    const double cw = cond.weight_of(comp.concept_id);
    if (cw <= 0.0) continue;
    const double var = abar * comp.sigma0 * comp.sigma0 + (1.0 - abar);
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x.data[i] - root_abar * comp.mean[i];
      sq += d * d;
    }
    const double log_term = std::log(comp.weight * cw) - 0.5 * sq / var -
                            0.5 * dim * std::log(2.0 * std::numbers::pi * var);
    max_log = std::max(max_log, log_term);
    active.push_back({&comp, var, log_term});
  }

  double norm = 0.0;
  for (const auto& a : active) norm += std::exp(a.log_term - max_log);

  std::vector<double> score(x.size(), 0.0);
  for (const auto& a : active) {
    const double resp = std::exp(a.log_term - max_log) / norm;
    if (resp == 0.0) continue;
    const double scale = resp / a.var;
    for (std::size_t i = 0; i < x.size(); ++i)
      score[i] -= scale * (x.data[i] - root_abar * a.comp->mean[i]);
  }
  return score;
}

/// eps_hat = -sqrt(1 - abar_t) * score.
inline std::vector<double> predict_noise(const Latent& x, int t, const MixtureModel& mixture,
                                         const Condition& cond, const NoiseSchedule& schedule) {
  auto eps = mixture_score(x, t, mixture, cond, schedule);
  const double k = -std::sqrt(1.0 - schedule.alpha_bar(t));
  for (double& v : eps) v *= k;
  return eps;
}

/// One ancestral step x_t -> x_{t-1}. Draws from rng only when sigma_t > 0.
inline Latent reverse_step(const Latent& x, std::span<const double> eps_hat,
                           const NoiseSchedule& schedule, Rng& rng) {
  const int t = x.step;
  require(t >= 1, "reverse_step on a finished chain (t = 0)");
  require(t <= schedule.steps(), "latent step exceeds schedule length");
  require(eps_hat.size() == x.size(), "noise prediction length does not match latent");

  const double inv_root_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = schedule.sigma(t);

  Latent out = x;
  out.step = t - 1;
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data[i] = inv_root_alpha * (x.data[i] - eps_coef * eps_hat[i]);
  if (sigma > 0.0) {
    for (double& v : out.data) v += sigma * rng.normal();
  }
  return out;
}

/// Runs reverse steps from x.step down to stop_t (exclusive of further steps).
inline Latent denoise(Latent x, int stop_t, const MixtureModel& mixture, const Condition& cond,
                      const NoiseSchedule& schedule, Rng& rng) {
  require(stop_t >= 0 && stop_t <= x.step, "denoise target must not exceed current step");
  while (x.step > stop_t) {
    const auto eps = predict_noise(x, x.step, mixture, cond, schedule);
    x = reverse_step(x, eps, schedule, rng);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Sampling

/// The three sequential streams a chain consumes.
struct ChainStreams {
  Rng init;
  Rng shared;
  Rng local;
};

/// Streams for one chain: init/shared keyed by the shared-phase identity,
/// local keyed by the user running the tail.
inline ChainStreams chain_streams(const RngStreams& streams, std::uint64_t shared_index,
                                  std::uint64_t local_index) {
  return {streams.stream("init", shared_index), streams.stream("shared", shared_index),
          streams.stream("local", local_index)};
}

inline Latent initial_latent(const MixtureModel& mixture, const NoiseSchedule& schedule,
                             Rng& init) {
  std::vector<double> data(mixture.pixels());
  for (double& v : data) v = init.normal();
  return Latent(std::move(data), mixture.width(), mixture.height(), schedule.steps());
}

/// Full chain T..1. Steps t > T - switch_point draw from the shared stream,
/// the rest from the local stream.
inline Latent sample(const NoiseSchedule& schedule, const MixtureModel& mixture,
                     const Condition& cond, ChainStreams streams, int switch_point = 0) {
  require(switch_point >= 0 && switch_point <= schedule.steps(),
          "stream switch point must lie in [0, T]");
  validate(cond, mixture);
  Latent x = initial_latent(mixture, schedule, streams.init);
  const int handoff_t = schedule.steps() - switch_point;
  x = denoise(std::move(x), handoff_t, mixture, cond, schedule, streams.shared);
  return denoise(std::move(x), 0, mixture, cond, schedule, streams.local);
}

/// Transforms the handoff between executors, e.g. quantize + lossy link.
using HandoffLink = std::function<Latent(const Latent&)>;

struct SplitResult {
  Latent handoff;  // as it left the shared executor
  Latent final;
};

/// Shared phase only: x_T through steps T..T-s+1 under shared_cond.
inline Latent shared_phase(const NoiseSchedule& schedule, const MixtureModel& mixture,
                           const Condition& shared_cond, int shared_steps, Rng& init,
                           Rng& shared) {
  require(shared_steps >= 0 && shared_steps <= schedule.steps(),
          "shared step count must lie in [0, T]");
  validate(shared_cond, mixture);
  Latent x = initial_latent(mixture, schedule, init);
  return denoise(std::move(x), schedule.steps() - shared_steps, mixture, shared_cond, schedule,
                 shared);
}

inline SplitResult split_sample(const NoiseSchedule& schedule, const MixtureModel& mixture,
                                const Condition& shared_cond, const Condition& local_cond,
                                int shared_steps, const HandoffLink& link,
                                ChainStreams streams) {
  validate(local_cond, mixture);
  Latent handoff =
      shared_phase(schedule, mixture, shared_cond, shared_steps, streams.init, streams.shared);
  Latent received = link ? link(handoff) : handoff;
  require(received.step == handoff.step && received.size() == handoff.size(),
          "link altered handoff shape");
  Latent final = denoise(std::move(received), 0, mixture, local_cond, schedule, streams.local);
  return {std::move(handoff), std::move(final)};
}

}  // namespace cdiff
