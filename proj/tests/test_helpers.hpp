// Shared synthesis helpers for the test suites.
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "dhvc/audio.hpp"

namespace dhvc::testing {

inline AudioBuffer sine(double freq_hz, double duration_s, double amplitude = 0.3,
                        int rate = kCanonicalSampleRate) {
  AudioBuffer audio;
  audio.sample_rate_hz = rate;
  const auto n = static_cast<std::size_t>(duration_s * rate);
  audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    audio.samples[i] =
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / rate);
  return audio;
}

inline AudioBuffer silence(double duration_s, int rate = kCanonicalSampleRate) {
  AudioBuffer audio;
  audio.sample_rate_hz = rate;
  audio.samples.assign(static_cast<std::size_t>(duration_s * rate), 0.0);
  return audio;
}

// Linear frequency glide; phase-accumulated so the instantaneous frequency
// matches the schedule exactly.
inline AudioBuffer glide(double f_start, double f_end, double duration_s,
                         double amplitude = 0.3, int rate = kCanonicalSampleRate) {
  AudioBuffer audio;
  audio.sample_rate_hz = rate;
  const auto n = static_cast<std::size_t>(duration_s * rate);
  audio.samples.resize(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n);
    phase += (f_start + (f_end - f_start) * frac) / rate;
    audio.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * phase);
  }
  return audio;
}

inline AudioBuffer concat(const AudioBuffer& a, const AudioBuffer& b) {
  AudioBuffer out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

inline double voiced_median_f0(const std::vector<double>& f0,
                               const std::vector<std::uint8_t>& voiced) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < f0.size(); ++i)
    if (voiced[i]) vals.push_back(f0[i]);
  if (vals.empty()) return 0.0;
  std::sort(vals.begin(), vals.end());
  return vals[vals.size() / 2];
}

}  // namespace dhvc::testing
