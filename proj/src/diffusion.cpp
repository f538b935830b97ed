#include "dhvc/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dhvc/errors.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::diffusion {

double mel_log_floor() { return std::log(kMelPowerFloor); }

static void require_unit_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError(std::string(what) + ": t = " + std::to_string(t) +
                      " outside [0, 1]");
}

double beta_at(const NoiseSchedule& sched, double t) {
  require_unit_time(t, "beta_at");
  return sched.beta0 + t * (sched.beta1 - sched.beta0);
}

double int_beta(const NoiseSchedule& sched, double t) {
  require_unit_time(t, "int_beta");
  return sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t;
}

MarginalParams marginal_params(const NoiseSchedule& sched, double t) {
  const double ib = int_beta(sched, t);
  return {std::exp(-0.5 * ib), 1.0 - std::exp(-ib)};
}

double loss_weight(const NoiseSchedule& sched, double t) {
  return 1.0 - std::exp(-int_beta(sched, t));
}

std::int64_t DiffusionPrior::masked_count() const {
  std::int64_t n = 0;
  for (auto m : mask) n += (m != 0);
  return n;
}

Tensor sample_forward(const Tensor& x0, const DiffusionPrior& prior,
                      const NoiseSchedule& sched, double t, std::uint64_t seed) {
  require_same_shape(x0, prior.z, "sample_forward");
  const auto [alpha, variance] = marginal_params(sched, t);
  const double sd = std::sqrt(variance);
  Rng rng(seed);
  Tensor out(x0.shape);
  for (std::int64_t i = 0; i < x0.numel(); ++i)
    out[i] = alpha * x0[i] + (1.0 - alpha) * prior.z[i] + sd * rng.normal();
  return out;
}

Tensor analytic_conditional_score(const Tensor& x_t, const Tensor& x0,
                                  const DiffusionPrior& prior,
                                  const NoiseSchedule& sched, double t) {
  require_same_shape(x_t, x0, "analytic_conditional_score");
  require_same_shape(x_t, prior.z, "analytic_conditional_score");
  const auto [alpha, variance] = marginal_params(sched, t);
  if (variance <= 0.0)
    throw DomainError("analytic_conditional_score: singular at t = " + std::to_string(t));
  Tensor out(x_t.shape);
  for (std::int64_t i = 0; i < x_t.numel(); ++i)
    out[i] = -(x_t[i] - alpha * x0[i] - (1.0 - alpha) * prior.z[i]) / variance;
  return out;
}

DsmResult dsm_loss(const ScoreFn& score_fn, const Tensor& x0,
                   const DiffusionPrior& prior, const NoiseSchedule& sched,
                   const std::vector<TimeSeed>& batch) {
  require_same_shape(x0, prior.z, "dsm_loss");
  DsmResult res;
  res.per_sample.reserve(batch.size());
  const double inv_n = x0.numel() > 0 ? 1.0 / static_cast<double>(x0.numel()) : 0.0;
  for (const auto& [t, seed] : batch) {
    if (!(t > kTrainTimeFloor && t <= 1.0))
      throw DomainError("dsm_loss: t = " + std::to_string(t) + " outside (" +
                        std::to_string(kTrainTimeFloor) + ", 1]");
    const Tensor x_t = sample_forward(x0, prior, sched, t, seed);
    const Tensor target = analytic_conditional_score(x_t, x0, prior, sched, t);
    const Tensor est = score_fn(x_t, prior.z, t);
    require_same_shape(est, x_t, "dsm_loss estimator output");
    if (!est.all_finite())
      throw NumericalError("dsm_loss: non-finite score estimate at t = " +
                           std::to_string(t));
    double sq = 0.0;
    for (std::int64_t i = 0; i < x_t.numel(); ++i) {
      const double d = est[i] - target[i];
      sq += d * d;
    }
    res.per_sample.push_back(loss_weight(sched, t) * sq * inv_n);
  }
  double acc = 0.0;
  for (double v : res.per_sample) acc += v;
  res.loss = res.per_sample.empty() ? 0.0 : acc / static_cast<double>(res.per_sample.size());
  return res;
}

DiffusionPrior apply_frequency_mask(const DiffusionPrior& prior, double ratio,
                                    std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw DomainError("apply_frequency_mask: ratio = " + std::to_string(ratio) +
                      " outside [0, 1)");
  if (prior.z.rank() != 2)
    throw ShapeError("apply_frequency_mask: prior must be mel-shaped [frames x bins], got " +
                     shape_str(prior.z.shape));
  const std::int64_t n_frames = prior.z.dim(0);
  const std::int64_t n_bins = prior.z.dim(1);
  const std::int64_t target = std::llround(ratio * static_cast<double>(n_bins));

  DiffusionPrior out;
  out.z = prior.z;
  out.mask.assign(static_cast<std::size_t>(prior.z.numel()), 0);
  if (target == 0) {
    out.mask.clear();
    return out;
  }

  std::vector<std::uint8_t> bin_masked(static_cast<std::size_t>(n_bins), 0);
  std::int64_t covered = 0;
  Rng rng(seed);
  while (covered < target) {
    const std::int64_t start = rng.uniform_int(0, n_bins - 1);
    const std::int64_t width = rng.uniform_int(4, 12);
    for (std::int64_t b = start; b < std::min(start + width, n_bins); ++b) {
      if (bin_masked[static_cast<std::size_t>(b)]) continue;
      bin_masked[static_cast<std::size_t>(b)] = 1;
      if (++covered == target) break;
    }
  }

  const double fill = mel_log_floor();
  for (std::int64_t f = 0; f < n_frames; ++f) {
    for (std::int64_t b = 0; b < n_bins; ++b) {
      if (!bin_masked[static_cast<std::size_t>(b)]) continue;
      const std::int64_t i = f * n_bins + b;
      out.z[i] = fill;
      out.mask[static_cast<std::size_t>(i)] = 1;
    }
  }
  return out;
}

static Tensor reverse_sample_impl(const ScoreFn& score_fn, const DiffusionPrior& prior,
                                  const NoiseSchedule& sched, const SamplerConfig& cfg,
                                  const std::vector<std::int64_t>& shape,
                                  double drift_sign, SamplerTrace* trace) {
  if (cfg.n_steps < 1)
    throw DomainError("reverse_sample: n_steps must be >= 1");
  if (shape != prior.z.shape)
    throw ShapeError("reverse_sample: requested shape " + shape_str(shape) +
                     " does not match prior " + shape_str(prior.z.shape));

  const double h = 1.0 / static_cast<double>(cfg.n_steps);
  const double init_sd = cfg.temperature * std::sqrt(marginal_params(sched, 1.0).variance);

  Rng rng(mix_seed(cfg.seed, 0x7265762d73646521ULL));
  Tensor x(shape);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) x[i] = prior.z[i] + init_sd * rng.normal();

  auto record = [&](double t) {
    if (!trace) return;
    double sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) sq += x[i] * x[i];
    trace->t.push_back(t);
    trace->x_rms.push_back(n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0);
  };
  record(1.0);

  for (int k = cfg.n_steps; k >= 1; --k) {
    const double t = static_cast<double>(k) * h;
    const double beta = beta_at(sched, t);
    const Tensor s = score_fn(x, prior.z, t);
    require_same_shape(s, x, "reverse_sample score output");
    const double step_sd = (k > 1) ? std::sqrt(beta * h) : 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double drift = beta * h * (0.5 * (prior.z[i] - x[i]) - s[i]);
      x[i] -= drift_sign * drift;
      if (step_sd > 0.0) x[i] += step_sd * rng.normal();
    }
    if (!x.all_finite())
      throw DivergenceError("reverse_sample: non-finite state", cfg.n_steps - k + 1);
    record(t - h);
  }
  return x;
}

Tensor reverse_sample(const ScoreFn& score_fn, const DiffusionPrior& prior,
                      const NoiseSchedule& sched, const SamplerConfig& cfg,
                      const std::vector<std::int64_t>& shape, SamplerTrace* trace) {
  return reverse_sample_impl(score_fn, prior, sched, cfg, shape, +1.0, trace);
}

Tensor reverse_sample_mutated(const ScoreFn& score_fn, const DiffusionPrior& prior,
                              const NoiseSchedule& sched, const SamplerConfig& cfg,
                              const std::vector<std::int64_t>& shape,
                              double drift_sign, SamplerTrace* trace) {
  return reverse_sample_impl(score_fn, prior, sched, cfg, shape, drift_sign, trace);
}

}  // namespace dhvc::diffusion
