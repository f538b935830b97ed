// dhvc/diffusion.hpp -- score-SDE machinery shared by the pitch and mel stages:
// closed-form forward marginal, analytic conditional score, denoising
// score-matching loss, frequency-masked priors and the reverse-SDE sampler.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dhvc/schedule.hpp"
#include "dhvc/tensor.hpp"

namespace dhvc::diffusion {

// Log-power floor used for mel values; masked prior cells are filled with it.
inline constexpr double kMelPowerFloor = 1e-5;
double mel_log_floor();  // log(kMelPowerFloor)

double beta_at(const NoiseSchedule& sched, double t);

// Integral of beta_s over [0, t]: beta0*t + (beta1-beta0)*t^2/2.
// Throws DomainError for t outside [0, 1].
double int_beta(const NoiseSchedule& sched, double t);

struct MarginalParams {
  double alpha;     // exp(-0.5 * int_beta)
  double variance;  // 1 - exp(-int_beta)
};

// Forward-marginal coefficients: X_t ~ N(alpha*x0 + (1-alpha)*z, variance*I).
MarginalParams marginal_params(const NoiseSchedule& sched, double t);

// Loss weight lambda_t = 1 - exp(-int_beta) (identical to the marginal variance).
double loss_weight(const NoiseSchedule& sched, double t);

// Data-driven prior: tensor z (contour- or mel-shaped) plus an optional mask
// (1 = masked cell). An empty mask vector means "no mask".
struct DiffusionPrior {
  Tensor z;
  std::vector<std::uint8_t> mask;

  bool has_mask() const { return !mask.empty(); }
  std::int64_t masked_count() const;
};

// Draws X_t = alpha*x0 + (1-alpha)*z + sqrt(variance)*eps, eps ~ N(0, I),
// deterministically for a given seed.
Tensor sample_forward(const Tensor& x0, const DiffusionPrior& prior,
                      const NoiseSchedule& sched, double t, std::uint64_t seed);

// Analytic conditional score -(x_t - alpha*x0 - (1-alpha)*z) / variance.
// Throws DomainError at t = 0 (variance is zero there).
Tensor analytic_conditional_score(const Tensor& x_t, const Tensor& x0,
                                  const DiffusionPrior& prior,
                                  const NoiseSchedule& sched, double t);

// Score estimator interface: (x_t, z, t) -> score tensor shaped like x_t.
// Style or other conditioning is closed over by the caller.
using ScoreFn = std::function<Tensor(const Tensor& x_t, const Tensor& z, double t)>;

// Lower time cutoff for training draws; the conditional score is singular at 0.
inline constexpr double kTrainTimeFloor = 1e-5;

struct TimeSeed {
  double t;
  std::uint64_t seed;
};

struct DsmResult {
  double loss = 0.0;
  std::vector<double> per_sample;
};

// Mean over the batch of lambda_t * mean((score_fn - analytic score)^2).
// Throws NumericalError naming the offending t if the estimator returns a
// non-finite value.
DsmResult dsm_loss(const ScoreFn& score_fn, const Tensor& x0,
                   const DiffusionPrior& prior, const NoiseSchedule& sched,
                   const std::vector<TimeSeed>& batch);

// Masks contiguous mel-bin bands (widths 4..12) until exactly
// round(ratio * n_mels) bins are covered; masked cells of z are filled with
// the mel log floor. Requires a mel-shaped prior [frames x n_mels].
DiffusionPrior apply_frequency_mask(const DiffusionPrior& prior, double ratio,
                                    std::uint64_t seed);

struct SamplerConfig {
  int n_steps = 6;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

// Per-step diagnostics for CSV export.
struct SamplerTrace {
  std::vector<double> t;
  std::vector<double> x_rms;
};

// Euler-Maruyama reverse-SDE sampler. Starts at N(z, temperature^2*variance(1)*I)
// and integrates t from 1 down to 0 in n_steps steps; the stochastic term is
// omitted on the final step. Deterministic per seed.
Tensor reverse_sample(const ScoreFn& score_fn, const DiffusionPrior& prior,
                      const NoiseSchedule& sched, const SamplerConfig& cfg,
                      const std::vector<std::int64_t>& shape,
                      SamplerTrace* trace = nullptr);

// Test hook: same sampler with the deterministic drift multiplied by `drift_sign`.
// The verification suite uses -1 to prove the suite catches a sign error.
Tensor reverse_sample_mutated(const ScoreFn& score_fn, const DiffusionPrior& prior,
                              const NoiseSchedule& sched, const SamplerConfig& cfg,
                              const std::vector<std::int64_t>& shape,
                              double drift_sign, SamplerTrace* trace = nullptr);

}  // namespace dhvc::diffusion
