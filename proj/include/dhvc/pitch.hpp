// dhvc/pitch.hpp -- F0 extraction at 4x mel resolution plus the
// normalization / denormalization transforms.
//
// The tracker is NCCF candidate search with Viterbi smoothing: per 80-sample
// hop it keeps the top-K normalized cross-correlation peaks in the lag band
// plus an unvoiced candidate, then finds the cheapest path under an octave
// transition cost and a voicing switch cost.
#pragma once

#include <cstdint>
#include <vector>

#include "dhvc/audio.hpp"

namespace dhvc::pitch {

inline constexpr int kContourHop = 80;  // mel hop / 4

struct PitchContour {
  std::vector<double> f0_hz;         // 0 at unvoiced frames
  std::vector<std::uint8_t> voiced;  // parallel flags
  int hop_samples = kContourHop;

  std::int64_t size() const { return static_cast<std::int64_t>(f0_hz.size()); }
};

struct PitchStats {
  double mean_hz = 0.0;
  double std_hz = 1.0;  // clamped to >= 1
};

struct NormalizedContour {
  std::vector<double> values;  // z-scores; exactly 0 at unvoiced frames
  std::vector<std::uint8_t> voiced;
};

struct TrackerConfig {
  double f_min_hz = 60.0;
  double f_max_hz = 400.0;
  int nccf_window = 320;
  int top_k = 5;
  double nccf_threshold = 0.3;   // below this the frame is forced unvoiced
  double unvoiced_cost = 0.45;   // local cost of the unvoiced candidate
  double lambda_octave = 4.0;    // transition cost per octave between voiced frames
  double switch_cost = 0.2;      // voiced <-> unvoiced transition cost
  double lag_bias = 0.05;        // slight preference for shorter lags
  double energy_rel_floor = 0.01;  // frames below this fraction of peak RMS are unvoiced
};

// Throws InvalidInputError when the audio is shorter than one analysis
// window (nccf_window + max lag) or the band is inverted.
PitchContour track_pitch(const AudioBuffer& audio, const TrackerConfig& cfg = {});

// Mean / population std over voiced frames, std clamped to >= 1 Hz.
// Throws NoVoicedFramesError on a fully unvoiced contour.
PitchStats compute_stats(const PitchContour& contour);

// Voiced frames -> (f0 - mean) / std; unvoiced stay exactly 0.
NormalizedContour normalize_f0(const PitchContour& contour, const PitchStats& stats);

// Elementwise log(f0 + 1); unvoiced zeros map to 0.
std::vector<double> log1p_f0(const PitchContour& contour);

// Voiced frames -> z*std + mean clamped to [f_min, f_max]; unvoiced stay 0.
PitchContour denormalize_f0(const NormalizedContour& normalized, const PitchStats& target,
                            double f_min_hz = 60.0, double f_max_hz = 400.0);

// Pad (unvoiced) or trim so the contour is exactly 4x the mel frame count.
void align_to_mel_frames(PitchContour& contour, std::int64_t n_mel_frames);

}  // namespace dhvc::pitch
