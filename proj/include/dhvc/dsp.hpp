// dhvc/dsp.hpp -- spectral analysis: STFT, mel projection, content features,
// waveform perturbation and Griffin-Lim inversion.
#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "dhvc/audio.hpp"
#include "dhvc/tensor.hpp"

namespace dhvc::dsp {

inline constexpr int kWindowSamples = 1280;
inline constexpr int kHopSamples = 320;
inline constexpr int kNumMels = 80;
inline constexpr double kPowerFloor = 1e-5;
double log_floor();  // log(kPowerFloor)

struct StftConfig {
  int window = kWindowSamples;
  int hop = kHopSamples;
};

// Row-major [n_frames x n_bins] with n_bins = window/2 + 1.
struct ComplexSpectrogram {
  std::int64_t n_frames = 0;
  std::int64_t n_bins = 0;
  std::vector<std::complex<double>> values;

  std::complex<double>& at(std::int64_t f, std::int64_t b) {
    return values[static_cast<std::size_t>(f * n_bins + b)];
  }
  std::complex<double> at(std::int64_t f, std::int64_t b) const {
    return values[static_cast<std::size_t>(f * n_bins + b)];
  }
};

// Frame count convention shared by the whole pipeline: ceil(len / hop),
// frame i centered at i*hop + hop/2 under reflect padding of window/2 per side.
std::int64_t frame_count(std::int64_t n_samples, int hop);
// Offset of the first sample covered by frame i (can be negative, into the padding).
std::int64_t frame_start(std::int64_t frame, const StftConfig& cfg);

// Hann-windowed STFT. Throws InvalidInputError on empty audio.
ComplexSpectrogram stft(const AudioBuffer& audio, const StftConfig& cfg = {});

struct MelFilterbank {
  int n_mels = kNumMels;
  std::int64_t n_fft_bins = kWindowSamples / 2 + 1;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  std::vector<double> weights;  // row-major [n_mels x n_fft_bins]

  double at(int mel, std::int64_t bin) const {
    return weights[static_cast<std::size_t>(mel) * static_cast<std::size_t>(n_fft_bins) +
                   static_cast<std::size_t>(bin)];
  }
  // Peak (center) frequency of each triangle, Hz.
  std::vector<double> center_frequencies_hz() const;

  static MelFilterbank make(int n_mels = kNumMels, int n_fft = kWindowSamples,
                            int sample_rate = kCanonicalSampleRate, double f_min = 0.0,
                            double f_max = 8000.0);
};

struct MelSpectrogram {
  std::int64_t n_frames = 0;
  int n_mels = kNumMels;
  int frame_hop_samples = kHopSamples;
  int frame_window_samples = kWindowSamples;
  std::vector<double> values;  // row-major [n_frames x n_mels], log power

  double& at(std::int64_t f, int m) {
    return values[static_cast<std::size_t>(f) * static_cast<std::size_t>(n_mels) +
                  static_cast<std::size_t>(m)];
  }
  double at(std::int64_t f, int m) const {
    return values[static_cast<std::size_t>(f) * static_cast<std::size_t>(n_mels) +
                  static_cast<std::size_t>(m)];
  }
};

// log(max(fb . |spec|^2, 1e-5)). Throws ShapeError on bin-count mismatch.
MelSpectrogram mel_project(const ComplexSpectrogram& spec, const MelFilterbank& fb);

// Convenience: stft + mel_project at canonical settings.
MelSpectrogram mel_of_audio(const AudioBuffer& audio, const MelFilterbank& fb,
                            const StftConfig& cfg = {});

Tensor mel_to_tensor(const MelSpectrogram& mel);
MelSpectrogram mel_from_tensor(const Tensor& t);

struct GriffinLimResult {
  AudioBuffer audio;
  // Mel-domain L2 distance of the accepted iterate, one entry per iteration.
  std::vector<double> mel_distance;
};

// Phase reconstruction from a mel spectrogram via the filterbank pseudo-inverse
// and Griffin-Lim iterations; keeps the best iterate under the mel-domain
// objective, so the reported distances are non-increasing.
// Throws InvalidInputError on non-finite input or iterations < 1.
GriffinLimResult griffin_lim(const MelSpectrogram& mel, const MelFilterbank& fb,
                             int iterations, std::uint64_t seed = 0);

struct ContentFeatures {
  std::int64_t n_frames = 0;
  int dim = 13;
  std::vector<double> values;  // row-major [n_frames x dim]

  double at(std::int64_t f, int d) const {
    return values[static_cast<std::size_t>(f) * static_cast<std::size_t>(dim) +
                  static_cast<std::size_t>(d)];
  }
};

// Mel-cepstral content features: DCT-II of the log-mel frame, coefficients
// 1..d_content (coefficient 0 dropped to reduce loudness leakage).
ContentFeatures content_features(const AudioBuffer& audio, const MelFilterbank& fb,
                                 int d_content = 13);

// Perturbation used at training time to strip pitch/timbre cues from the
// content path: pitch/formant shift via resample-and-crop plus a 3-band
// random parametric EQ.
struct PerturbParams {
  double resample_ratio = 1.0;        // frequencies scale by this factor
  double eq_gain_db[3] = {0, 0, 0};   // peaking gains
  double eq_center_hz[3] = {400, 1200, 3600};
  double eq_q = 1.0;
};

PerturbParams draw_perturb_params(std::uint64_t seed);
AudioBuffer apply_perturb(const AudioBuffer& audio, const PerturbParams& params);
AudioBuffer perturb_waveform(const AudioBuffer& audio, std::uint64_t seed);

}  // namespace dhvc::dsp
