#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "dhvc/dsp.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::dsp {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Least-squares ISTFT: Hann-weighted overlap-add normalized by the summed
// squared window. Output covers samples [0, n_frames*hop).
AudioBuffer istft(const std::vector<std::vector<double>>& frames, const StftConfig& cfg) {
  const std::int64_t n_frames = static_cast<std::int64_t>(frames.size());
  const std::int64_t out_len = n_frames * cfg.hop;
  std::vector<double> acc(static_cast<std::size_t>(out_len), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(out_len), 0.0);

  std::vector<double> window(static_cast<std::size_t>(cfg.window));
  for (int n = 0; n < cfg.window; ++n)
    window[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.window);

  for (std::int64_t f = 0; f < n_frames; ++f) {
    const std::int64_t start = frame_start(f, cfg);
    for (int n = 0; n < cfg.window; ++n) {
      const std::int64_t idx = start + n;
      if (idx < 0 || idx >= out_len) continue;
      const double w = window[static_cast<std::size_t>(n)];
      acc[static_cast<std::size_t>(idx)] += w * frames[static_cast<std::size_t>(f)][static_cast<std::size_t>(n)];
      norm[static_cast<std::size_t>(idx)] += w * w;
    }
  }
  AudioBuffer audio;
  audio.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t i = 0; i < out_len; ++i) {
    const double d = norm[static_cast<std::size_t>(i)];
    audio.samples[static_cast<std::size_t>(i)] =
        d > 1e-12 ? acc[static_cast<std::size_t>(i)] / d : 0.0;
  }
  return audio;
}

double mel_l2(const MelSpectrogram& a, const MelSpectrogram& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

GriffinLimResult griffin_lim(const MelSpectrogram& mel, const MelFilterbank& fb,
                             int iterations, std::uint64_t seed) {
  if (iterations < 1) throw InvalidInputError("griffin_lim: iterations must be >= 1");
  for (double v : mel.values)
    if (!std::isfinite(v)) throw InvalidInputError("griffin_lim: non-finite mel value");
  if (mel.n_mels != fb.n_mels)
    throw ShapeError("griffin_lim: mel bins do not match filterbank");

  const StftConfig cfg{mel.frame_window_samples, mel.frame_hop_samples};
  const std::int64_t n_frames = mel.n_frames;
  const std::int64_t n_bins = fb.n_fft_bins;

  // Nonnegative pseudo-inversion of the filterbank per frame: multiplicative
  // updates toward W q = exp(mel). Unlike a clamped least-squares inverse this
  // keeps the in-band power centroid unbiased, which the pitch round-trip
  // depends on.
  std::vector<double> col_sum(static_cast<std::size_t>(n_bins), 0.0);
  for (int m = 0; m < fb.n_mels; ++m)
    for (std::int64_t b = 0; b < n_bins; ++b)
      col_sum[static_cast<std::size_t>(b)] += fb.at(m, b);

  std::vector<std::vector<double>> target_mag(
      static_cast<std::size_t>(n_frames),
      std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  std::vector<double> mel_power(static_cast<std::size_t>(fb.n_mels));
  std::vector<double> q(static_cast<std::size_t>(n_bins));
  std::vector<double> wq(static_cast<std::size_t>(fb.n_mels));
  for (std::int64_t f = 0; f < n_frames; ++f) {
    for (int m = 0; m < fb.n_mels; ++m)
      mel_power[static_cast<std::size_t>(m)] = std::exp(mel.at(f, m));
    for (std::int64_t b = 0; b < n_bins; ++b) {
      double acc = 0.0;
      for (int m = 0; m < fb.n_mels; ++m) acc += fb.at(m, b) * mel_power[static_cast<std::size_t>(m)];
      q[static_cast<std::size_t>(b)] =
          col_sum[static_cast<std::size_t>(b)] > 0.0
              ? acc / col_sum[static_cast<std::size_t>(b)]
              : 0.0;
    }
    for (int it = 0; it < 30; ++it) {
      for (int m = 0; m < fb.n_mels; ++m) {
        double acc = 0.0;
        for (std::int64_t b = 0; b < n_bins; ++b)
          acc += fb.at(m, b) * q[static_cast<std::size_t>(b)];
        wq[static_cast<std::size_t>(m)] =
            mel_power[static_cast<std::size_t>(m)] / std::max(acc, 1e-300);
      }
      for (std::int64_t b = 0; b < n_bins; ++b) {
        if (col_sum[static_cast<std::size_t>(b)] <= 0.0) continue;
        double acc = 0.0;
        for (int m = 0; m < fb.n_mels; ++m)
          acc += fb.at(m, b) * wq[static_cast<std::size_t>(m)];
        q[static_cast<std::size_t>(b)] *= acc / col_sum[static_cast<std::size_t>(b)];
      }
    }
    for (std::int64_t b = 0; b < n_bins; ++b)
      target_mag[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)] =
          std::sqrt(std::max(q[static_cast<std::size_t>(b)], 0.0));
  }

  // Random initial phase, deterministic per seed.
  Rng rng(mix_seed(seed, 0x67726c696d212121ULL));
  std::vector<std::vector<double>> phase(
      static_cast<std::size_t>(n_frames),
      std::vector<double>(static_cast<std::size_t>(2 * n_bins), 0.0));
  for (auto& row : phase)
    for (std::int64_t b = 0; b < n_bins; ++b) {
      const double p = rng.uniform(0.0, 2.0 * std::numbers::pi);
      row[static_cast<std::size_t>(2 * b)] = std::cos(p);
      row[static_cast<std::size_t>(2 * b + 1)] = std::sin(p);
    }

  fftw_complex* cbuf;
  double* rbuf;
  fftw_plan inv_plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    cbuf = fftw_alloc_complex(static_cast<std::size_t>(n_bins));
    rbuf = fftw_alloc_real(static_cast<std::size_t>(cfg.window));
    inv_plan = fftw_plan_dft_c2r_1d(cfg.window, cbuf, rbuf, FFTW_ESTIMATE);
  }

  GriffinLimResult result;
  result.mel_distance.reserve(static_cast<std::size_t>(iterations));
  double best_distance = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> time_frames(
      static_cast<std::size_t>(n_frames),
      std::vector<double>(static_cast<std::size_t>(cfg.window), 0.0));

  for (int iter = 0; iter < iterations; ++iter) {
    // Synthesize from current magnitude/phase estimate.
    for (std::int64_t f = 0; f < n_frames; ++f) {
      const auto& ph = phase[static_cast<std::size_t>(f)];
      const auto& mag = target_mag[static_cast<std::size_t>(f)];
      for (std::int64_t b = 0; b < n_bins; ++b) {
        cbuf[b][0] = mag[static_cast<std::size_t>(b)] * ph[static_cast<std::size_t>(2 * b)];
        cbuf[b][1] = mag[static_cast<std::size_t>(b)] * ph[static_cast<std::size_t>(2 * b + 1)];
      }
      fftw_execute(inv_plan);
      auto& tf = time_frames[static_cast<std::size_t>(f)];
      for (int n = 0; n < cfg.window; ++n) tf[static_cast<std::size_t>(n)] = rbuf[n] / cfg.window;
    }
    AudioBuffer audio = istft(time_frames, cfg);

    // Re-analyze; update phase and track the mel-domain objective.
    const ComplexSpectrogram spec = stft(audio, cfg);
    const MelSpectrogram remel = mel_project(spec, fb);
    const double dist = mel_l2(remel, mel);
    if (dist < best_distance) {
      best_distance = dist;
      result.audio = std::move(audio);
    }
    result.mel_distance.push_back(best_distance);

    for (std::int64_t f = 0; f < n_frames && f < spec.n_frames; ++f) {
      auto& ph = phase[static_cast<std::size_t>(f)];
      for (std::int64_t b = 0; b < n_bins; ++b) {
        const std::complex<double> v = spec.at(f, b);
        const double a = std::abs(v);
        if (a > 1e-12) {
          ph[static_cast<std::size_t>(2 * b)] = v.real() / a;
          ph[static_cast<std::size_t>(2 * b + 1)] = v.imag() / a;
        }
      }
    }
  }

  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(inv_plan);
    fftw_free(cbuf);
    fftw_free(rbuf);
  }
  return result;
}

}  // namespace dhvc::dsp
