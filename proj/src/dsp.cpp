#include "dhvc/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "dhvc/errors.hpp"

namespace dhvc::dsp {

double log_floor() { return std::log(kPowerFloor); }

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Mirror an index into [0, n) without repeating the edge sample.
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t j = i % period;
  if (j < 0) j += period;
  return j < n ? j : period - j;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

std::int64_t frame_count(std::int64_t n_samples, int hop) {
  return (n_samples + hop - 1) / hop;
}

std::int64_t frame_start(std::int64_t frame, const StftConfig& cfg) {
  return frame * cfg.hop + cfg.hop / 2 - cfg.window / 2;
}

ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& cfg) {
  validate_audio(audio);
  if (audio.samples.empty()) throw InvalidInputError("stft: empty audio");
  if (cfg.window < cfg.hop) throw InvalidInputError("stft: window must be >= hop");

  const std::int64_t len = static_cast<std::int64_t>(audio.samples.size());
  const std::int64_t n_frames = frame_count(len, cfg.hop);
  const std::int64_t n_bins = cfg.window / 2 + 1;

  std::vector<double> window(static_cast<std::size_t>(cfg.window));
  for (int n = 0; n < cfg.window; ++n)
    window[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.window);

  ComplexSpectrogram spec;
  spec.n_frames = n_frames;
  spec.n_bins = n_bins;
  spec.values.resize(static_cast<std::size_t>(n_frames * n_bins));

  double* in;
  fftw_complex* out;
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    in = fftw_alloc_real(static_cast<std::size_t>(cfg.window));
    out = fftw_alloc_complex(static_cast<std::size_t>(n_bins));
    plan = fftw_plan_dft_r2c_1d(cfg.window, in, out, FFTW_ESTIMATE);
  }

  for (std::int64_t f = 0; f < n_frames; ++f) {
    const std::int64_t start = frame_start(f, cfg);
    for (int n = 0; n < cfg.window; ++n) {
      const std::int64_t idx = reflect_index(start + n, len);
      in[n] = audio.samples[static_cast<std::size_t>(idx)] * window[static_cast<std::size_t>(n)];
    }
    fftw_execute(plan);
    for (std::int64_t b = 0; b < n_bins; ++b)
      spec.at(f, b) = {out[b][0], out[b][1]};
  }

  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  return spec;
}

std::vector<double> MelFilterbank::center_frequencies_hz() const {
  const double mel_lo = hz_to_mel(f_min_hz);
  const double mel_hi = hz_to_mel(f_max_hz);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m)
    centers[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1));
  return centers;
}

MelFilterbank MelFilterbank::make(int n_mels, int n_fft, int sample_rate, double f_min,
                                  double f_max) {
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_fft_bins = n_fft / 2 + 1;
  fb.f_min_hz = f_min;
  fb.f_max_hz = f_max;
  fb.weights.assign(static_cast<std::size_t>(n_mels) * static_cast<std::size_t>(fb.n_fft_bins),
                    0.0);

  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int e = 0; e < n_mels + 2; ++e)
    edges[static_cast<std::size_t>(e)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * e / (n_mels + 1));

  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (std::int64_t k = 0; k < fb.n_fft_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.weights[static_cast<std::size_t>(m) * static_cast<std::size_t>(fb.n_fft_bins) +
                 static_cast<std::size_t>(k)] = w;
    }
  }
  return fb;
}

MelSpectrogram mel_project(const ComplexSpectrogram& spec, const MelFilterbank& fb) {
  if (spec.n_bins != fb.n_fft_bins)
    throw ShapeError("mel_project: spectrogram has " + std::to_string(spec.n_bins) +
                     " bins, filterbank expects " + std::to_string(fb.n_fft_bins));
  MelSpectrogram mel;
  mel.n_frames = spec.n_frames;
  mel.n_mels = fb.n_mels;
  mel.values.resize(static_cast<std::size_t>(spec.n_frames) *
                    static_cast<std::size_t>(fb.n_mels));

  std::vector<double> power(static_cast<std::size_t>(spec.n_bins));
  for (std::int64_t f = 0; f < spec.n_frames; ++f) {
    for (std::int64_t b = 0; b < spec.n_bins; ++b)
      power[static_cast<std::size_t>(b)] = std::norm(spec.at(f, b));
    for (int m = 0; m < fb.n_mels; ++m) {
      double acc = 0.0;
      const double* w =
          fb.weights.data() + static_cast<std::size_t>(m) * static_cast<std::size_t>(fb.n_fft_bins);
      for (std::int64_t b = 0; b < spec.n_bins; ++b)
        acc += w[b] * power[static_cast<std::size_t>(b)];
      mel.at(f, m) = std::log(std::max(acc, kPowerFloor));
    }
  }
  return mel;
}

MelSpectrogram mel_of_audio(const AudioBuffer& audio, const MelFilterbank& fb,
                            const StftConfig& cfg) {
  return mel_project(stft(audio, cfg), fb);
}

Tensor mel_to_tensor(const MelSpectrogram& mel) {
  return Tensor::from({mel.n_frames, mel.n_mels}, mel.values);
}

MelSpectrogram mel_from_tensor(const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError("mel_from_tensor: expected rank-2 tensor, got " + shape_str(t.shape));
  MelSpectrogram mel;
  mel.n_frames = t.dim(0);
  mel.n_mels = static_cast<int>(t.dim(1));
  mel.values = t.data;
  return mel;
}

ContentFeatures content_features(const AudioBuffer& audio, const MelFilterbank& fb,
                                 int d_content) {
  require_canonical_rate(audio);
  const MelSpectrogram mel = mel_of_audio(audio, fb);
  ContentFeatures feats;
  feats.n_frames = mel.n_frames;
  feats.dim = d_content;
  feats.values.resize(static_cast<std::size_t>(mel.n_frames) *
                      static_cast<std::size_t>(d_content));

  // Orthonormal DCT-II rows 1..d_content over the mel axis.
  const int n = mel.n_mels;
  std::vector<double> basis(static_cast<std::size_t>(d_content) * static_cast<std::size_t>(n));
  const double scale = std::sqrt(2.0 / n);
  for (int j = 0; j < d_content; ++j)
    for (int m = 0; m < n; ++m)
      basis[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
            static_cast<std::size_t>(m)] =
          scale * std::cos(std::numbers::pi * (j + 1) * (m + 0.5) / n);

  for (std::int64_t f = 0; f < mel.n_frames; ++f) {
    for (int j = 0; j < d_content; ++j) {
      double acc = 0.0;
      const double* row =
          basis.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(n);
      for (int m = 0; m < n; ++m) acc += row[m] * mel.at(f, m);
      feats.values[static_cast<std::size_t>(f) * static_cast<std::size_t>(d_content) +
                   static_cast<std::size_t>(j)] = acc;
    }
  }
  return feats;
}

}  // namespace dhvc::dsp
