// dhvc/corpus.hpp -- synthetic-speaker corpus: harmonic source + formant
// envelope utterances with known F0 schedules, analyzed into the full
// feature bundle the trainers consume.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dhvc/audio.hpp"
#include "dhvc/dsp.hpp"
#include "dhvc/pitch.hpp"

namespace dhvc::pipeline {

struct SyntheticSpeaker {
  int id = 0;
  double f0_base_hz = 150.0;
  double f0_range_hz = 12.0;  // span of the slow intonation drift
  double vibrato_rate_hz = 5.5;
  double vibrato_depth_hz = 3.0;
  double spectral_tilt_db_per_oct = -8.0;
  std::array<double, 3> formant_hz = {600.0, 1500.0, 2800.0};
};

struct Utterance {
  AudioBuffer audio;
  dsp::MelSpectrogram mel;
  pitch::PitchContour contour;  // aligned: length == 4 * mel.n_frames
  dsp::ContentFeatures content;  // frame count == mel.n_frames
  pitch::PitchStats stats;
  int speaker_id = -1;
  double schedule_mean_hz = 0.0;  // mean of the generating trajectory, 0 if unknown
};

struct Corpus {
  std::vector<SyntheticSpeaker> speakers;
  std::vector<Utterance> utterances;
  int utterances_per_speaker = 0;
  std::uint64_t seed = 0;
};

// Speaker parameters with f0 bases spread geometrically over [110, 270] Hz.
std::vector<SyntheticSpeaker> make_speakers(int count, std::uint64_t seed);

// Harmonic-source utterance, 1-3 s (sample count a multiple of the mel hop);
// optionally returns the generating F0 schedule at the contour rate.
AudioBuffer synthesize_utterance(const SyntheticSpeaker& spk, std::uint64_t seed,
                                 std::vector<double>* f0_schedule = nullptr);

// Full analysis bundle. When perturb_seed is set the content features are
// computed on the perturbed waveform (training-style bundle); otherwise on
// the clean waveform (inference-style).
Utterance analyze_utterance(const AudioBuffer& audio, int speaker_id,
                            const dsp::MelFilterbank& fb,
                            std::optional<std::uint64_t> perturb_seed = std::nullopt,
                            const pitch::TrackerConfig& tracker = {});

// Deterministic per seed; utterances are analyzed in parallel.
Corpus generate_corpus(int speakers, int utterances_per, std::uint64_t seed,
                       const dsp::MelFilterbank& fb);

// Directory of WAVs with CSV/raw sidecars plus a corpus manifest.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace dhvc::pipeline
