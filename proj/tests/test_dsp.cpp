#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dhvc/dsp.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/pitch.hpp"
#include "dhvc/rng.hpp"
#include "test_helpers.hpp"

using namespace dhvc;
using dhvc::testing::sine;
using dhvc::testing::silence;

TEST_SUITE_BEGIN("dsp");

TEST_CASE("stft of one second of silence has 50 all-zero frames") {
  const auto spec = dsp::stft(silence(1.0));
  CHECK(spec.n_frames == 50);
  CHECK(spec.n_bins == 641);
  double total = 0.0;
  for (const auto& v : spec.values) total += std::abs(v);
  CHECK(total == 0.0);
}

TEST_CASE("stft frame count convention") {
  CHECK(dsp::frame_count(16000, 320) == 50);
  CHECK(dsp::frame_count(16001, 320) == 51);
  CHECK(dsp::frame_count(1, 320) == 1);
  CHECK(dsp::frame_count(320, 320) == 1);
  CHECK(dsp::frame_count(321, 320) == 2);
}

TEST_CASE("stft of a 1 kHz sine peaks at bin 80 in every interior frame") {
  const auto spec = dsp::stft(sine(1000.0, 1.0));
  // Derived: bin = round(1000 * 1280 / 16000).
  const std::int64_t expected_bin = std::llround(1000.0 * 1280.0 / 16000.0);
  CHECK(expected_bin == 80);
  for (std::int64_t f = 2; f + 2 < spec.n_frames; ++f) {
    std::int64_t argmax = 0;
    double best = -1.0;
    for (std::int64_t b = 0; b < spec.n_bins; ++b) {
      const double mag = std::abs(spec.at(f, b));
      if (mag > best) {
        best = mag;
        argmax = b;
      }
    }
    CHECK(argmax == expected_bin);
  }
}

TEST_CASE("stft impulse energy is confined to covering frames") {
  AudioBuffer audio = silence(1.0);
  audio.samples[8000] = 1.0;
  const dsp::StftConfig cfg;
  const auto spec = dsp::stft(audio, cfg);
  for (std::int64_t f = 0; f < spec.n_frames; ++f) {
    // Brute-force coverage oracle: the frame holds energy iff the impulse
    // falls inside its window with a nonzero Hann weight.
    const std::int64_t offset = 8000 - dsp::frame_start(f, cfg);
    const bool covered = offset > 0 && offset < cfg.window;
    double energy = 0.0;
    for (std::int64_t b = 0; b < spec.n_bins; ++b) energy += std::norm(spec.at(f, b));
    if (covered)
      CHECK(energy > 1e-12);
    else
      CHECK(energy == 0.0);
  }
}

TEST_CASE("stft rejects empty audio") {
  CHECK_THROWS_AS(dsp::stft(AudioBuffer{}), InvalidInputError);
}

TEST_CASE("stft/mel framing identity holds for odd lengths") {
  const auto fb = dsp::MelFilterbank::make();
  for (const std::size_t len : {1601u, 5000u, 16000u, 16310u, 23040u}) {
    AudioBuffer audio;
    audio.samples.assign(len, 0.01);
    const auto spec = dsp::stft(audio);
    const auto mel = dsp::mel_project(spec, fb);
    CHECK(mel.n_frames == spec.n_frames);
    CHECK(mel.n_frames == dsp::frame_count(static_cast<std::int64_t>(len), 320));
  }
}

TEST_CASE("mel_project clamps an all-zero spectrogram to the log floor") {
  const auto fb = dsp::MelFilterbank::make();
  const auto mel = dsp::mel_project(dsp::stft(silence(0.5)), fb);
  for (double v : mel.values) CHECK(v == doctest::Approx(std::log(1e-5)).epsilon(1e-12));
}

TEST_CASE("mel_project argmax lands on the filter nearest 1 kHz") {
  const auto fb = dsp::MelFilterbank::make();
  const auto centers = fb.center_frequencies_hz();
  std::int64_t expected = 0;
  for (std::size_t m = 1; m < centers.size(); ++m)
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[static_cast<std::size_t>(expected)] - 1000.0))
      expected = static_cast<std::int64_t>(m);
  const auto mel = dsp::mel_of_audio(sine(1000.0, 1.0), fb);
  for (std::int64_t f = 2; f + 2 < mel.n_frames; ++f) {
    int argmax = 0;
    for (int m = 1; m < mel.n_mels; ++m)
      if (mel.at(f, m) > mel.at(f, argmax)) argmax = m;
    CHECK(std::abs(argmax - expected) <= 1);
  }
}

TEST_CASE("doubling the signal raises unclamped log power by log 4") {
  const auto fb = dsp::MelFilterbank::make();
  const auto mel1 = dsp::mel_of_audio(sine(1000.0, 0.5, 0.2), fb);
  const auto mel2 = dsp::mel_of_audio(sine(1000.0, 0.5, 0.4), fb);
  const double floor_val = std::log(1e-5);
  for (std::size_t i = 0; i < mel1.values.size(); ++i) {
    if (mel1.values[i] > floor_val + 1.4 && mel2.values[i] > floor_val + 1.4)
      CHECK(mel2.values[i] - mel1.values[i] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
}

TEST_CASE("mel_project rejects a bin-count mismatch") {
  auto fb = dsp::MelFilterbank::make(80, 512);
  CHECK_THROWS_AS(dsp::mel_project(dsp::stft(silence(0.5)), fb), ShapeError);
}

TEST_CASE("filterbank rows are non-negative unimodal triangles with full coverage") {
  const auto fb = dsp::MelFilterbank::make();
  for (int m = 0; m < fb.n_mels; ++m) {
    bool seen_positive = false;
    bool falling = false;
    double prev = 0.0;
    for (std::int64_t b = 0; b < fb.n_fft_bins; ++b) {
      const double w = fb.at(m, b);
      CHECK(w >= 0.0);
      if (w > 0.0) seen_positive = true;
      if (w < prev) falling = true;
      if (falling && w > prev) FAIL_CHECK("row " << m << " is not unimodal");
      prev = w;
    }
    CHECK(seen_positive);
  }
  // Column coverage strictly inside the band edges.
  for (std::int64_t b = 0; b < fb.n_fft_bins; ++b) {
    const double f = static_cast<double>(b) * 16000.0 / 1280.0;
    if (f <= fb.f_min_hz || f >= fb.f_max_hz) continue;
    double total = 0.0;
    for (int m = 0; m < fb.n_mels; ++m) total += fb.at(m, b);
    CHECK(total > 0.0);
  }
}

TEST_CASE("griffin_lim round-trips the pitch of a 440 Hz tone") {
  const auto fb = dsp::MelFilterbank::make();
  const auto mel = dsp::mel_of_audio(sine(440.0, 1.0), fb);
  const auto result = dsp::griffin_lim(mel, fb, 60, 7);
  pitch::TrackerConfig cfg;
  cfg.f_max_hz = 500.0;
  const auto contour = pitch::track_pitch(result.audio, cfg);
  const double median = testing::voiced_median_f0(contour.f0_hz, contour.voiced);
  CHECK(median == doctest::Approx(440.0).epsilon(5.0 / 440.0));
}

TEST_CASE("griffin_lim of an all-floor mel is near silent") {
  const auto fb = dsp::MelFilterbank::make();
  dsp::MelSpectrogram mel;
  mel.n_frames = 40;
  mel.values.assign(40 * 80, std::log(1e-5));
  const auto result = dsp::griffin_lim(mel, fb, 30, 3);
  double rms = 0.0;
  for (double s : result.audio.samples) rms += s * s;
  rms = std::sqrt(rms / static_cast<double>(result.audio.samples.size()));
  CHECK(rms < 1e-3);
}

TEST_CASE("griffin_lim objective is non-increasing on random mels") {
  const auto fb = dsp::MelFilterbank::make();
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 100);
    dsp::MelSpectrogram mel;
    mel.n_frames = 24;
    mel.values.resize(24 * 80);
    for (auto& v : mel.values) v = std::log(1e-5) + rng.uniform(0.0, 10.0);
    const auto result = dsp::griffin_lim(mel, fb, 12, static_cast<std::uint64_t>(trial));
    REQUIRE(result.mel_distance.size() == 12);
    for (std::size_t i = 1; i < result.mel_distance.size(); ++i)
      CHECK(result.mel_distance[i] <= result.mel_distance[i - 1] + 1e-12);
    CHECK(result.mel_distance.back() <= result.mel_distance.front() + 1e-12);
  }
}

TEST_CASE("griffin_lim rejects bad inputs") {
  const auto fb = dsp::MelFilterbank::make();
  dsp::MelSpectrogram mel;
  mel.n_frames = 4;
  mel.values.assign(4 * 80, 0.0);
  CHECK_THROWS_AS(dsp::griffin_lim(mel, fb, 0), InvalidInputError);
  mel.values[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(dsp::griffin_lim(mel, fb, 5), InvalidInputError);
}

TEST_CASE("perturb_waveform is deterministic in the seed") {
  const auto audio = sine(220.0, 0.7);
  const auto a = dsp::perturb_waveform(audio, 42);
  const auto b = dsp::perturb_waveform(audio, 42);
  CHECK(a.samples == b.samples);
  const auto c = dsp::perturb_waveform(audio, 43);
  CHECK(a.samples != c.samples);
}

TEST_CASE("forced resample ratio 1.1 shifts 220 Hz to 242 Hz") {
  dsp::PerturbParams params;
  params.resample_ratio = 1.1;
  const auto shifted = dsp::apply_perturb(sine(220.0, 1.2), params);
  const auto contour = pitch::track_pitch(shifted);
  const double median = testing::voiced_median_f0(contour.f0_hz, contour.voiced);
  CHECK(median == doctest::Approx(242.0).epsilon(5.0 / 242.0));
}

TEST_CASE("identity perturbation settings reproduce the input") {
  dsp::PerturbParams params;  // ratio 1, all gains 0
  const auto audio = sine(220.0, 0.5);
  const auto out = dsp::apply_perturb(audio, params);
  REQUIRE(out.samples.size() == audio.samples.size());
  for (std::size_t i = 0; i < audio.samples.size(); ++i)
    CHECK(std::abs(out.samples[i] - audio.samples[i]) < 1e-6);
}

TEST_CASE("perturb parameters stay in their documented ranges") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = dsp::draw_perturb_params(seed);
    CHECK(p.resample_ratio >= 0.85);
    CHECK(p.resample_ratio <= 1.15);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(p.eq_gain_db[i]) <= 6.0);
      CHECK(p.eq_center_hz[i] >= 150.0);
      CHECK(p.eq_center_hz[i] <= 7000.0);
    }
  }
}

TEST_CASE("content features of silence are constant across frames") {
  const auto fb = dsp::MelFilterbank::make();
  const auto feats = dsp::content_features(silence(1.0), fb);
  for (std::int64_t f = 1; f < feats.n_frames; ++f)
    for (int d = 0; d < feats.dim; ++d)
      CHECK(feats.at(f, d) == doctest::Approx(feats.at(0, d)).epsilon(1e-12));
}

TEST_CASE("content features are loudness robust with coefficient 0 dropped") {
  const auto fb = dsp::MelFilterbank::make();
  // Utterance-like signal: swept harmonics so the spectrum is dense enough
  // that the log floor clamps the same cells at both gains.
  AudioBuffer a;
  a.samples.resize(16000);
  Rng noise(404);
  double phase = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    const double f0 = 150.0 + 12.0 * std::sin(2.0 * std::numbers::pi * 1.3 * t);
    phase += f0 / 16000.0;
    double v = 0.0;
    for (int k = 1; k <= 40; ++k)
      v += std::sin(2.0 * std::numbers::pi * k * phase) / k;
    a.samples[i] = 0.25 * (v + 0.05 * noise.normal()) / 3.0;
  }
  AudioBuffer b = a;
  for (auto& s : b.samples) s *= 0.5;
  const auto fa = dsp::content_features(a, fb);
  const auto fbf = dsp::content_features(b, fb);
  double rms = 0.0;
  for (std::size_t i = 0; i < fa.values.size(); ++i) {
    const double d = fa.values[i] - fbf.values[i];
    rms += d * d;
  }
  rms = std::sqrt(rms / static_cast<double>(fa.values.size()));
  CHECK(rms < 0.05);
}

TEST_CASE("wav reader accepts only 16-bit mono PCM") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(DHVC_TEST_WORK_DIR);
  fs::create_directories(dir);

  const auto tone = sine(200.0, 0.1);
  const fs::path good = dir / "good.wav";
  write_wav(good, tone);
  const auto back = read_wav(good);
  CHECK(back.sample_rate_hz == 16000);
  CHECK(back.samples.size() == tone.samples.size());
  // 16-bit quantization bound.
  for (std::size_t i = 0; i < tone.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - tone.samples[i]) <= 1.0 / 32768.0 + 1e-9);

  // Corrupt the header fields one at a time: stereo, 8-bit, float format.
  auto bytes = [&] {
    std::ifstream f(good, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  }();
  auto write_variant = [&](std::size_t offset, char value) {
    std::string v = bytes;
    v[offset] = value;
    const fs::path p = dir / "variant.wav";
    std::ofstream f(p, std::ios::binary);
    f.write(v.data(), static_cast<std::streamsize>(v.size()));
    f.close();
    return p;
  };
  CHECK_THROWS_AS(read_wav(write_variant(22, 2)), InvalidInputError);  // channels
  CHECK_THROWS_AS(read_wav(write_variant(34, 8)), InvalidInputError);  // bit depth
  CHECK_THROWS_AS(read_wav(write_variant(20, 3)), InvalidInputError);  // format tag
}

TEST_CASE("content frame count equals mel frame count for any length") {
  const auto fb = dsp::MelFilterbank::make();
  for (const double dur : {0.11, 0.5, 1.03}) {
    const auto audio = sine(200.0, dur);
    const auto feats = dsp::content_features(audio, fb);
    const auto mel = dsp::mel_of_audio(audio, fb);
    CHECK(feats.n_frames == mel.n_frames);
  }
}

TEST_SUITE_END();
