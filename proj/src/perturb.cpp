#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "dhvc/dsp.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::dsp {

namespace {

// Reads through the input at rate `ratio` (linear interpolation), so all
// frequencies scale by `ratio`; output is cropped or zero-padded back to the
// input length.
std::vector<double> resample_and_crop(const std::vector<double>& x, double ratio) {
  const std::int64_t len = static_cast<std::int64_t>(x.size());
  std::vector<double> out(static_cast<std::size_t>(len), 0.0);
  for (std::int64_t i = 0; i < len; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto i0 = static_cast<std::int64_t>(pos);
    if (i0 >= len - 1) break;
    const double frac = pos - static_cast<double>(i0);
    out[static_cast<std::size_t>(i)] = (1.0 - frac) * x[static_cast<std::size_t>(i0)] +
                                       frac * x[static_cast<std::size_t>(i0) + 1];
  }
  return out;
}

// RBJ-cookbook peaking biquad; 0 dB gain reduces to the identity filter.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad peaking(double center_hz, double q, double gain_db, double rate) {
    const double a = std::pow(10.0, gain_db / 40.0);
    const double w0 = 2.0 * std::numbers::pi * center_hz / rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha / a;
    Biquad f;
    f.b0 = (1.0 + alpha * a) / a0;
    f.b1 = -2.0 * std::cos(w0) / a0;
    f.b2 = (1.0 - alpha * a) / a0;
    f.a1 = -2.0 * std::cos(w0) / a0;
    f.a2 = (1.0 - alpha / a) / a0;
    return f;
  }

  void process(std::vector<double>& x) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
};

}  // namespace

PerturbParams draw_perturb_params(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x70657274757262ULL));
  PerturbParams p;
  p.resample_ratio = rng.uniform(0.85, 1.15);
  // One center drawn log-uniformly inside each of three fixed bands.
  const double band_lo[3] = {150.0, 600.0, 2400.0};
  const double band_hi[3] = {600.0, 2400.0, 7000.0};
  for (int i = 0; i < 3; ++i) {
    p.eq_center_hz[i] =
        std::exp(rng.uniform(std::log(band_lo[i]), std::log(band_hi[i])));
    p.eq_gain_db[i] = rng.uniform(-6.0, 6.0);
  }
  return p;
}

AudioBuffer apply_perturb(const AudioBuffer& audio, const PerturbParams& params) {
  require_canonical_rate(audio);
  if (audio.samples.empty()) throw InvalidInputError("apply_perturb: empty audio");

  AudioBuffer out = audio;
  if (params.resample_ratio != 1.0)
    out.samples = resample_and_crop(out.samples, params.resample_ratio);
  for (int i = 0; i < 3; ++i) {
    if (params.eq_gain_db[i] == 0.0) continue;
    Biquad::peaking(params.eq_center_hz[i], params.eq_q, params.eq_gain_db[i],
                    static_cast<double>(audio.sample_rate_hz))
        .process(out.samples);
  }
  return out;
}

AudioBuffer perturb_waveform(const AudioBuffer& audio, std::uint64_t seed) {
  return apply_perturb(audio, draw_perturb_params(seed));
}

}  // namespace dhvc::dsp
