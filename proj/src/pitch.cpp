#include "dhvc/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dhvc/errors.hpp"

namespace dhvc::pitch {

namespace {

struct Candidate {
  double f0 = 0.0;       // 0 for the unvoiced candidate
  double local_cost = 0.0;
  bool voiced = false;
};

double octave_distance(double f_a, double f_b) {
  return std::abs(std::log2(f_a / f_b));
}

}  // namespace

PitchContour track_pitch(const AudioBuffer& audio, const TrackerConfig& cfg) {
  require_canonical_rate(audio);
  if (!(cfg.f_min_hz < cfg.f_max_hz) || cfg.f_min_hz <= 0.0)
    throw InvalidInputError("track_pitch: need 0 < f_min < f_max");

  const double rate = static_cast<double>(audio.sample_rate_hz);
  const int lag_min = std::max(2, static_cast<int>(std::floor(rate / cfg.f_max_hz)));
  const int lag_max = static_cast<int>(std::ceil(rate / cfg.f_min_hz));
  const int window = cfg.nccf_window;
  const std::int64_t len = static_cast<std::int64_t>(audio.samples.size());

  if (len < static_cast<std::int64_t>(window + lag_max))
    throw InvalidInputError("track_pitch: audio shorter than one analysis window (" +
                            std::to_string(window + lag_max) + " samples)");

  const std::int64_t n_frames = (len + kContourHop - 1) / kContourHop;
  const double* x = audio.samples.data();
  auto sample = [&](std::int64_t i) -> double { return i < len ? x[i] : 0.0; };

  // Prefix sums of x^2 for O(1) window energies.
  std::vector<double> sq_prefix(static_cast<std::size_t>(len) + 1, 0.0);
  for (std::int64_t i = 0; i < len; ++i)
    sq_prefix[static_cast<std::size_t>(i) + 1] =
        sq_prefix[static_cast<std::size_t>(i)] + x[i] * x[i];
  auto window_energy = [&](std::int64_t start, int n) -> double {
    const std::int64_t a = std::clamp<std::int64_t>(start, 0, len);
    const std::int64_t b = std::clamp<std::int64_t>(start + n, 0, len);
    return b > a ? sq_prefix[static_cast<std::size_t>(b)] - sq_prefix[static_cast<std::size_t>(a)]
                 : 0.0;
  };

  // Per-frame RMS for the low-energy gate.
  std::vector<double> frame_rms(static_cast<std::size_t>(n_frames), 0.0);
  double max_rms = 0.0;
  for (std::int64_t f = 0; f < n_frames; ++f) {
    const double e = window_energy(f * kContourHop, window);
    frame_rms[static_cast<std::size_t>(f)] = std::sqrt(e / window);
    max_rms = std::max(max_rms, frame_rms[static_cast<std::size_t>(f)]);
  }
  const double rms_gate = cfg.energy_rel_floor * max_rms;

  const int n_lags = lag_max - lag_min + 1;
  std::vector<double> nccf(static_cast<std::size_t>(n_lags), 0.0);
  std::vector<std::vector<Candidate>> cands(static_cast<std::size_t>(n_frames));

  for (std::int64_t f = 0; f < n_frames; ++f) {
    auto& frame_cands = cands[static_cast<std::size_t>(f)];
    // Unvoiced candidate is always present; forced-unvoiced frames get only it.
    Candidate unvoiced;
    unvoiced.local_cost = cfg.unvoiced_cost;

    const std::int64_t s = f * kContourHop;
    const bool low_energy =
        frame_rms[static_cast<std::size_t>(f)] < std::max(rms_gate, 1e-9);

    double peak_nccf = 0.0;
    if (!low_energy) {
      const double e0 = window_energy(s, window);
      for (int li = 0; li < n_lags; ++li) {
        const int lag = lag_min + li;
        double cross = 0.0;
        for (int n = 0; n < window; ++n) cross += sample(s + n) * sample(s + lag + n);
        const double el = window_energy(s + lag, window);
        nccf[static_cast<std::size_t>(li)] = cross / (std::sqrt(e0 * el) + 1e-12);
        peak_nccf = std::max(peak_nccf, nccf[static_cast<std::size_t>(li)]);
      }
    }

    if (low_energy || peak_nccf < cfg.nccf_threshold) {
      unvoiced.local_cost = 0.0;
      frame_cands.push_back(unvoiced);
      continue;
    }

    // Local maxima of the NCCF, refined with parabolic interpolation.
    struct Peak {
      double lag, value, adjusted;
    };
    std::vector<Peak> peaks;
    for (int li = 1; li + 1 < n_lags; ++li) {
      const double c = nccf[static_cast<std::size_t>(li)];
      const double l = nccf[static_cast<std::size_t>(li) - 1];
      const double r = nccf[static_cast<std::size_t>(li) + 1];
      if (c < l || c < r || c <= 0.0) continue;
      const double denom = l - 2.0 * c + r;
      double delta = 0.0;
      if (std::abs(denom) > 1e-12) delta = std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
      const double lag = static_cast<double>(lag_min + li) + delta;
      const double value = std::min(1.0, c - 0.25 * (l - r) * delta);
      const double adjusted =
          value * (1.0 - cfg.lag_bias * lag / static_cast<double>(lag_max));
      peaks.push_back({lag, value, adjusted});
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.adjusted > b.adjusted; });
    if (static_cast<int>(peaks.size()) > cfg.top_k) peaks.resize(static_cast<std::size_t>(cfg.top_k));

    for (const auto& p : peaks) {
      Candidate c;
      c.voiced = true;
      c.f0 = std::clamp(rate / p.lag, cfg.f_min_hz, cfg.f_max_hz);
      c.local_cost = 1.0 - p.adjusted;
      frame_cands.push_back(c);
    }
    frame_cands.push_back(unvoiced);
  }

  // Viterbi over the candidate lattice.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cost(static_cast<std::size_t>(n_frames));
  std::vector<std::vector<int>> back(static_cast<std::size_t>(n_frames));
  for (std::int64_t f = 0; f < n_frames; ++f) {
    const auto& cur = cands[static_cast<std::size_t>(f)];
    cost[static_cast<std::size_t>(f)].assign(cur.size(), inf);
    back[static_cast<std::size_t>(f)].assign(cur.size(), -1);
    for (std::size_t c = 0; c < cur.size(); ++c) {
      if (f == 0) {
        cost[0][c] = cur[c].local_cost;
        continue;
      }
      const auto& prev = cands[static_cast<std::size_t>(f) - 1];
      for (std::size_t p = 0; p < prev.size(); ++p) {
        double trans;
        if (cur[c].voiced && prev[p].voiced)
          trans = cfg.lambda_octave * octave_distance(cur[c].f0, prev[p].f0);
        else if (cur[c].voiced != prev[p].voiced)
          trans = cfg.switch_cost;
        else
          trans = 0.0;
        const double total = cost[static_cast<std::size_t>(f) - 1][p] + trans + cur[c].local_cost;
        if (total < cost[static_cast<std::size_t>(f)][c]) {
          cost[static_cast<std::size_t>(f)][c] = total;
          back[static_cast<std::size_t>(f)][c] = static_cast<int>(p);
        }
      }
    }
  }

  PitchContour contour;
  contour.f0_hz.assign(static_cast<std::size_t>(n_frames), 0.0);
  contour.voiced.assign(static_cast<std::size_t>(n_frames), 0);

  int best = 0;
  const auto& last = cost[static_cast<std::size_t>(n_frames) - 1];
  for (std::size_t c = 1; c < last.size(); ++c)
    if (last[c] < last[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  for (std::int64_t f = n_frames - 1; f >= 0; --f) {
    const auto& c = cands[static_cast<std::size_t>(f)][static_cast<std::size_t>(best)];
    if (c.voiced) {
      contour.f0_hz[static_cast<std::size_t>(f)] = c.f0;
      contour.voiced[static_cast<std::size_t>(f)] = 1;
    }
    best = back[static_cast<std::size_t>(f)][static_cast<std::size_t>(best)];
    if (f == 0) break;
  }
  return contour;
}

PitchStats compute_stats(const PitchContour& contour) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    if (!contour.voiced[static_cast<std::size_t>(i)]) continue;
    sum += contour.f0_hz[static_cast<std::size_t>(i)];
    ++n;
  }
  if (n == 0) throw NoVoicedFramesError("compute_stats: contour has no voiced frame");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    if (!contour.voiced[static_cast<std::size_t>(i)]) continue;
    const double d = contour.f0_hz[static_cast<std::size_t>(i)] - mean;
    sq += d * d;
  }
  PitchStats stats;
  stats.mean_hz = mean;
  stats.std_hz = std::max(1.0, std::sqrt(sq / static_cast<double>(n)));
  return stats;
}

NormalizedContour normalize_f0(const PitchContour& contour, const PitchStats& stats) {
  if (stats.std_hz < 1.0)
    throw DomainError("normalize_f0: stats std below the 1 Hz floor");
  NormalizedContour out;
  out.values.assign(static_cast<std::size_t>(contour.size()), 0.0);
  out.voiced = contour.voiced;
  for (std::int64_t i = 0; i < contour.size(); ++i)
    if (contour.voiced[static_cast<std::size_t>(i)])
      out.values[static_cast<std::size_t>(i)] =
          (contour.f0_hz[static_cast<std::size_t>(i)] - stats.mean_hz) / stats.std_hz;
  return out;
}

std::vector<double> log1p_f0(const PitchContour& contour) {
  std::vector<double> out(static_cast<std::size_t>(contour.size()), 0.0);
  for (std::int64_t i = 0; i < contour.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::log1p(contour.f0_hz[static_cast<std::size_t>(i)]);
  return out;
}

PitchContour denormalize_f0(const NormalizedContour& normalized, const PitchStats& target,
                            double f_min_hz, double f_max_hz) {
  if (target.std_hz < 1.0)
    throw DomainError("denormalize_f0: stats std below the 1 Hz floor");
  PitchContour out;
  out.f0_hz.assign(normalized.values.size(), 0.0);
  out.voiced = normalized.voiced;
  for (std::size_t i = 0; i < normalized.values.size(); ++i)
    if (normalized.voiced[i])
      out.f0_hz[i] = std::clamp(normalized.values[i] * target.std_hz + target.mean_hz,
                                f_min_hz, f_max_hz);
  return out;
}

void align_to_mel_frames(PitchContour& contour, std::int64_t n_mel_frames) {
  const auto want = static_cast<std::size_t>(4 * n_mel_frames);
  contour.f0_hz.resize(want, 0.0);
  contour.voiced.resize(want, 0);
}

}  // namespace dhvc::pitch
