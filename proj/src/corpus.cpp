#include "dhvc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "dhvc/errors.hpp"
#include "dhvc/io.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::pipeline {

std::vector<SyntheticSpeaker> make_speakers(int count, std::uint64_t seed) {
  std::vector<SyntheticSpeaker> speakers;
  speakers.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, 0x73706561ULL, static_cast<std::uint64_t>(i)));
    SyntheticSpeaker spk;
    spk.id = i;
    spk.f0_base_hz =
        count > 1 ? 110.0 * std::pow(270.0 / 110.0, static_cast<double>(i) / (count - 1))
                  : 180.0;
    spk.f0_range_hz = spk.f0_base_hz * rng.uniform(0.05, 0.10);
    spk.vibrato_rate_hz = rng.uniform(4.5, 6.5);
    spk.vibrato_depth_hz = spk.f0_base_hz * rng.uniform(0.010, 0.022);
    spk.spectral_tilt_db_per_oct = rng.uniform(-12.0, -4.0);
    spk.formant_hz = {rng.uniform(450.0, 850.0), rng.uniform(1100.0, 2100.0),
                      rng.uniform(2400.0, 3200.0)};
    speakers.push_back(spk);
  }
  return speakers;
}

namespace {

struct Segment {
  std::int64_t start;
  std::int64_t length;
  bool voiced;
  std::array<double, 3> formant_hz;  // per-segment vowel-like variation
};

double formant_gain_db(double f, const std::array<double, 3>& formants,
                       const std::array<double, 3>& peaks_db,
                       const std::array<double, 3>& bw_hz) {
  double db = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double d = (f - formants[static_cast<std::size_t>(j)]) /
                     bw_hz[static_cast<std::size_t>(j)];
    db += peaks_db[static_cast<std::size_t>(j)] / (1.0 + d * d);
  }
  return db;
}

}  // namespace

AudioBuffer synthesize_utterance(const SyntheticSpeaker& spk, std::uint64_t seed,
                                 std::vector<double>* f0_schedule) {
  Rng rng(mix_seed(seed, 0x75747465ULL));
  const double rate = kCanonicalSampleRate;
  const int hop = dsp::kHopSamples;

  const double duration_s = rng.uniform(1.0, 2.0);
  const std::int64_t len =
      (static_cast<std::int64_t>(duration_s * rate) / hop) * hop;

  // Alternate silence / voiced segments across the clip.
  std::vector<Segment> segments;
  std::int64_t pos = static_cast<std::int64_t>(rng.uniform(0.04, 0.10) * rate);
  while (pos < len) {
    const auto vlen = static_cast<std::int64_t>(rng.uniform(0.30, 0.60) * rate);
    Segment seg;
    seg.start = pos;
    seg.length = std::min(vlen, len - pos);
    seg.voiced = true;
    for (int j = 0; j < 3; ++j)
      seg.formant_hz[static_cast<std::size_t>(j)] =
          spk.formant_hz[static_cast<std::size_t>(j)] * rng.uniform(0.90, 1.10);
    if (seg.length > static_cast<std::int64_t>(0.15 * rate)) segments.push_back(seg);
    pos += vlen + static_cast<std::int64_t>(rng.uniform(0.10, 0.22) * rate);
  }
  if (segments.empty()) {
    Segment seg;
    seg.start = static_cast<std::int64_t>(0.05 * rate);
    seg.length = len - 2 * seg.start;
    seg.voiced = true;
    seg.formant_hz = spk.formant_hz;
    segments.push_back(seg);
  }

  // Smooth intonation drift: two slow sinusoids bounded by f0_range.
  const double drift_rate1 = rng.uniform(0.25, 0.50);
  const double drift_rate2 = rng.uniform(0.70, 1.20);
  const double drift_phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double drift_phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  auto f0_at = [&](double t_s) {
    return spk.f0_base_hz +
           0.7 * spk.f0_range_hz *
               std::sin(2.0 * std::numbers::pi * drift_rate1 * t_s + drift_phase1) +
           0.3 * spk.f0_range_hz *
               std::sin(2.0 * std::numbers::pi * drift_rate2 * t_s + drift_phase2) +
           spk.vibrato_depth_hz *
               std::sin(2.0 * std::numbers::pi * spk.vibrato_rate_hz * t_s + vib_phase);
  };

  const std::array<double, 3> peaks_db = {rng.uniform(7.0, 12.0), rng.uniform(6.0, 10.0),
                                          rng.uniform(4.0, 8.0)};
  const std::array<double, 3> bw_hz = {rng.uniform(90.0, 140.0), rng.uniform(110.0, 170.0),
                                       rng.uniform(140.0, 220.0)};

  AudioBuffer audio;
  audio.samples.assign(static_cast<std::size_t>(len), 0.0);
  if (f0_schedule) f0_schedule->assign(static_cast<std::size_t>(len / pitch::kContourHop), 0.0);

  const double ramp_s = 0.012;
  for (const auto& seg : segments) {
    const double amp = rng.uniform(0.18, 0.30);
    // Per-harmonic amplitudes from tilt + formant envelope, fixed per segment
    // at the segment's median f0.
    const double f0_mid = f0_at((seg.start + seg.length / 2) / rate);
    const int n_harm = std::min<int>(40, static_cast<int>(7400.0 / f0_mid));
    std::vector<double> harm_amp(static_cast<std::size_t>(n_harm));
    double norm = 0.0;
    for (int k = 1; k <= n_harm; ++k) {
      const double f = k * f0_mid;
      const double db = spk.spectral_tilt_db_per_oct * std::log2(f / 200.0) +
                        formant_gain_db(f, seg.formant_hz, peaks_db, bw_hz);
      harm_amp[static_cast<std::size_t>(k - 1)] = std::pow(10.0, db / 20.0) / k;
      norm += harm_amp[static_cast<std::size_t>(k - 1)];
    }
    for (auto& a : harm_amp) a *= amp / norm;

    double phase = rng.uniform(0.0, 1.0);
    for (std::int64_t n = 0; n < seg.length; ++n) {
      const std::int64_t idx = seg.start + n;
      if (idx >= len) break;
      const double t_s = static_cast<double>(idx) / rate;
      const double f0 = f0_at(t_s);
      phase += f0 / rate;
      double env = 1.0;
      const double edge = std::min(static_cast<double>(n),
                                   static_cast<double>(seg.length - 1 - n)) /
                          (ramp_s * rate);
      if (edge < 1.0) env = 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(edge, 0.0, 1.0));
      double v = 0.0;
      for (int k = 1; k <= n_harm; ++k)
        v += harm_amp[static_cast<std::size_t>(k - 1)] *
             std::sin(2.0 * std::numbers::pi * k * phase);
      // Low-level aspiration noise keeps the voiced spectrum dense, the way
      // recorded speech is; silences stay digitally zero.
      v += 0.015 * amp * rng.normal();
      audio.samples[static_cast<std::size_t>(idx)] = env * v;

      if (f0_schedule && idx % pitch::kContourHop == 0)
        (*f0_schedule)[static_cast<std::size_t>(idx / pitch::kContourHop)] = f0;
    }
  }
  return audio;
}

Utterance analyze_utterance(const AudioBuffer& audio, int speaker_id,
                            const dsp::MelFilterbank& fb,
                            std::optional<std::uint64_t> perturb_seed,
                            const pitch::TrackerConfig& tracker) {
  Utterance utt;
  utt.audio = audio;
  utt.speaker_id = speaker_id;
  utt.mel = dsp::mel_of_audio(audio, fb);
  utt.contour = pitch::track_pitch(audio, tracker);
  pitch::align_to_mel_frames(utt.contour, utt.mel.n_frames);
  utt.stats = pitch::compute_stats(utt.contour);
  const AudioBuffer content_audio =
      perturb_seed ? dsp::perturb_waveform(audio, *perturb_seed) : audio;
  utt.content = dsp::content_features(content_audio, fb);
  if (utt.content.n_frames != utt.mel.n_frames)
    throw ShapeError("analyze_utterance: content/mel frame mismatch");
  return utt;
}

Corpus generate_corpus(int speakers, int utterances_per, std::uint64_t seed,
                       const dsp::MelFilterbank& fb) {
  if (speakers < 1 || utterances_per < 1)
    throw InvalidInputError("generate_corpus: counts must be >= 1");
  Corpus corpus;
  corpus.seed = seed;
  corpus.utterances_per_speaker = utterances_per;
  corpus.speakers = make_speakers(speakers, seed);
  const int total = speakers * utterances_per;
  corpus.utterances.resize(static_cast<std::size_t>(total));

  const unsigned n_workers =
      std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_workers);
  for (unsigned w = 0; w < n_workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = static_cast<int>(w); i < total; i += static_cast<int>(n_workers)) {
          const int spk = i / utterances_per;
          const int utt = i % utterances_per;
          const std::uint64_t utt_seed =
              mix_seed(seed, static_cast<std::uint64_t>(spk), static_cast<std::uint64_t>(utt));
          std::vector<double> schedule;
          const AudioBuffer audio =
              synthesize_utterance(corpus.speakers[static_cast<std::size_t>(spk)], utt_seed,
                                   &schedule);
          Utterance u = analyze_utterance(audio, spk, fb, mix_seed(utt_seed, 0x7065ULL));
          double mean = 0.0;
          std::int64_t n = 0;
          for (double f : schedule)
            if (f > 0.0) {
              mean += f;
              ++n;
            }
          u.schedule_mean_hz = n > 0 ? mean / static_cast<double>(n) : 0.0;
          corpus.utterances[static_cast<std::size_t>(i)] = std::move(u);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return corpus;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

std::string utt_stem(int speaker, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%03d_utt%03d", speaker, index);
  return buf;
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "seed=" << corpus.seed << "\n";
  manifest << "speakers=" << corpus.speakers.size() << "\n";
  manifest << "utterances_per_speaker=" << corpus.utterances_per_speaker << "\n";
  for (const auto& spk : corpus.speakers) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "speaker=%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", spk.id,
                  spk.f0_base_hz, spk.f0_range_hz, spk.vibrato_rate_hz,
                  spk.vibrato_depth_hz, spk.spectral_tilt_db_per_oct, spk.formant_hz[0],
                  spk.formant_hz[1], spk.formant_hz[2]);
    manifest << buf;
  }
  io::write_text_file(dir / "corpus.txt", manifest.str());

  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const Utterance& u = corpus.utterances[i];
    const std::string stem =
        utt_stem(u.speaker_id, static_cast<int>(i) % corpus.utterances_per_speaker);
    write_wav(dir / (stem + ".wav"), u.audio);
    io::write_mel_raw(dir / (stem + ".mel.raw"), u.mel);
    io::write_contour_csv(dir / (stem + ".contour.csv"), u.contour);
    io::write_content_csv(dir / (stem + ".content.csv"), u.content);
    char meta[160];
    std::snprintf(meta, sizeof(meta), "speaker_id=%d\nschedule_mean_hz=%.9g\nmean_hz=%.9g\nstd_hz=%.9g\n",
                  u.speaker_id, u.schedule_mean_hz, u.stats.mean_hz, u.stats.std_hz);
    io::write_text_file(dir / (stem + ".meta.txt"), meta);
  }
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const std::string manifest = io::read_text_file(dir / "corpus.txt");
  Corpus corpus;
  std::istringstream ss(manifest);
  std::string line;
  int n_speakers = 0;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "seed") corpus.seed = std::stoull(value);
    if (key == "speakers") n_speakers = std::stoi(value);
    if (key == "utterances_per_speaker") corpus.utterances_per_speaker = std::stoi(value);
    if (key == "speaker") {
      SyntheticSpeaker spk;
      std::istringstream row(value);
      std::string cell;
      std::getline(row, cell, ',');
      spk.id = std::stoi(cell);
      double vals[8];
      for (double& v : vals) {
        std::getline(row, cell, ',');
        v = std::stod(cell);
      }
      spk.f0_base_hz = vals[0];
      spk.f0_range_hz = vals[1];
      spk.vibrato_rate_hz = vals[2];
      spk.vibrato_depth_hz = vals[3];
      spk.spectral_tilt_db_per_oct = vals[4];
      spk.formant_hz = {vals[5], vals[6], vals[7]};
      corpus.speakers.push_back(spk);
    }
  }
  if (static_cast<int>(corpus.speakers.size()) != n_speakers)
    throw InvalidInputError("corpus manifest speaker count mismatch: " + dir.string());

  for (int spk = 0; spk < n_speakers; ++spk) {
    for (int utt = 0; utt < corpus.utterances_per_speaker; ++utt) {
      const std::string stem = utt_stem(spk, utt);
      Utterance u;
      u.audio = read_wav(dir / (stem + ".wav"));
      u.mel = io::read_mel_raw(dir / (stem + ".mel.raw"));
      u.contour = io::read_contour_csv(dir / (stem + ".contour.csv"));
      u.content = io::read_content_csv(dir / (stem + ".content.csv"));
      const std::string meta = io::read_text_file(dir / (stem + ".meta.txt"));
      std::istringstream ms(meta);
      while (std::getline(ms, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "speaker_id") u.speaker_id = std::stoi(value);
        if (key == "schedule_mean_hz") u.schedule_mean_hz = std::stod(value);
        if (key == "mean_hz") u.stats.mean_hz = std::stod(value);
        if (key == "std_hz") u.stats.std_hz = std::stod(value);
      }
      corpus.utterances.push_back(std::move(u));
    }
  }
  return corpus;
}

}  // namespace dhvc::pipeline
