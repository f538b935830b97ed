#include <doctest.h>

#include <cmath>

#include "dhvc/errors.hpp"
#include "dhvc/pitch.hpp"
#include "test_helpers.hpp"

using namespace dhvc;
using dhvc::testing::glide;
using dhvc::testing::silence;
using dhvc::testing::sine;

TEST_SUITE_BEGIN("pitch");

TEST_CASE("tracker finds steady tones within 3 Hz") {
  for (const double freq : {110.0, 220.0}) {
    const auto contour = pitch::track_pitch(sine(freq, 1.0));
    const double median = testing::voiced_median_f0(contour.f0_hz, contour.voiced);
    CHECK(std::abs(median - freq) <= 3.0);
    // Interior frames are voiced.
    std::int64_t voiced = 0;
    for (std::int64_t i = 10; i < contour.size() - 10; ++i)
      voiced += contour.voiced[static_cast<std::size_t>(i)];
    CHECK(voiced >= contour.size() - 20 - 4);
  }
  pitch::TrackerConfig wide;
  wide.f_max_hz = 500.0;
  const auto contour = pitch::track_pitch(sine(440.0, 1.0), wide);
  CHECK(std::abs(testing::voiced_median_f0(contour.f0_hz, contour.voiced) - 440.0) <= 3.0);
}

TEST_CASE("digital silence is fully unvoiced with zero f0") {
  const auto contour = pitch::track_pitch(silence(0.5));
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    CHECK(contour.voiced[static_cast<std::size_t>(i)] == 0);
    CHECK(contour.f0_hz[static_cast<std::size_t>(i)] == 0.0);
  }
}

TEST_CASE("voiced f0 and voicing flags are mutually consistent") {
  const auto contour =
      pitch::track_pitch(testing::concat(sine(200.0, 0.5), silence(0.3)));
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    const bool v = contour.voiced[static_cast<std::size_t>(i)] != 0;
    CHECK((contour.f0_hz[static_cast<std::size_t>(i)] == 0.0) == !v);
    if (v) {
      CHECK(contour.f0_hz[static_cast<std::size_t>(i)] >= 60.0);
      CHECK(contour.f0_hz[static_cast<std::size_t>(i)] <= 400.0);
    }
  }
}

TEST_CASE("tracker follows a 150->300 Hz glide within 5 Hz") {
  const auto audio = glide(150.0, 300.0, 1.0);
  const auto contour = pitch::track_pitch(audio);
  // The synthesis schedule: f(i) = 150 + 150 * (sample / n).
  std::int64_t checked = 0;
  for (std::int64_t i = 8; i < contour.size() - 8; ++i) {
    REQUIRE(contour.voiced[static_cast<std::size_t>(i)] == 1);
    const double sample = static_cast<double>(i) * 80.0 + 160.0;  // window midpoint
    const double expected = 150.0 + 150.0 * sample / 16000.0;
    CHECK(std::abs(contour.f0_hz[static_cast<std::size_t>(i)] - expected) <= 5.0);
    ++checked;
  }
  CHECK(checked > 150);
  // No octave jumps above 0.6 octave between adjacent voiced frames.
  for (std::int64_t i = 1; i < contour.size(); ++i) {
    if (!contour.voiced[static_cast<std::size_t>(i)] ||
        !contour.voiced[static_cast<std::size_t>(i) - 1])
      continue;
    const double jump = std::abs(std::log2(contour.f0_hz[static_cast<std::size_t>(i)] /
                                           contour.f0_hz[static_cast<std::size_t>(i) - 1]));
    CHECK(jump <= 0.6);
  }
}

TEST_CASE("voicing accuracy on tone/silence concatenations is at least 95%") {
  const auto audio = testing::concat(
      testing::concat(sine(180.0, 0.6), silence(0.4)),
      testing::concat(sine(240.0, 0.5), silence(0.5)));
  const auto contour = pitch::track_pitch(audio);
  const double rate = 16000.0;
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    const double t = static_cast<double>(i) * 80.0 / rate;
    bool expect_voiced;
    if (t < 0.6)
      expect_voiced = true;
    else if (t < 1.0)
      expect_voiced = false;
    else if (t < 1.5)
      expect_voiced = true;
    else
      expect_voiced = false;
    if ((contour.voiced[static_cast<std::size_t>(i)] != 0) == expect_voiced) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(contour.size()) >= 0.95);
}

TEST_CASE("tracker rejects audio shorter than one analysis window") {
  AudioBuffer tiny;
  tiny.samples.assign(200, 0.1);
  CHECK_THROWS_AS(pitch::track_pitch(tiny), InvalidInputError);
}

TEST_CASE("compute_stats basics") {
  pitch::PitchContour c;
  c.f0_hz.assign(10, 200.0);
  c.voiced.assign(10, 1);
  const auto s = pitch::compute_stats(c);
  CHECK(s.mean_hz == doctest::Approx(200.0));
  CHECK(s.std_hz == 1.0);  // clamped floor

  pitch::PitchContour d;
  d.f0_hz = {180.0, 220.0, 180.0, 220.0};
  d.voiced = {1, 1, 1, 1};
  const auto sd = pitch::compute_stats(d);
  CHECK(sd.mean_hz == doctest::Approx(200.0));
  CHECK(sd.std_hz == doctest::Approx(20.0));

  pitch::PitchContour u;
  u.f0_hz.assign(5, 0.0);
  u.voiced.assign(5, 0);
  CHECK_THROWS_AS(pitch::compute_stats(u), NoVoicedFramesError);
}

TEST_CASE("normalize_f0 centers voiced frames and preserves unvoiced zeros") {
  pitch::PitchContour c;
  c.f0_hz = {200.0, 240.0, 0.0};
  c.voiced = {1, 1, 0};
  const pitch::PitchStats stats{200.0, 20.0};
  const auto norm = pitch::normalize_f0(c, stats);
  CHECK(norm.values[0] == doctest::Approx(0.0));
  CHECK(norm.values[1] == doctest::Approx(2.0));
  CHECK(norm.values[2] == 0.0);
}

TEST_CASE("log1p_f0 values") {
  pitch::PitchContour c;
  c.f0_hz = {0.0, 200.0, 100.0, 150.0};
  c.voiced = {0, 1, 1, 1};
  const auto lg = pitch::log1p_f0(c);
  CHECK(lg[0] == 0.0);
  CHECK(lg[1] == doctest::Approx(5.3033).epsilon(1e-4));
  // Monotone contours map to monotone outputs.
  CHECK(lg[2] < lg[3]);
  CHECK(lg[3] < lg[1]);
}

TEST_CASE("denormalize_f0 transports z-scores and clamps to the band") {
  pitch::NormalizedContour norm;
  norm.values = {0.0, 2.0, 50.0, 0.0};
  norm.voiced = {1, 1, 1, 0};
  const pitch::PitchStats target{120.0, 15.0};
  const auto c = pitch::denormalize_f0(norm, target);
  CHECK(c.f0_hz[0] == doctest::Approx(120.0));
  CHECK(c.f0_hz[1] == doctest::Approx(150.0));
  CHECK(c.f0_hz[2] == doctest::Approx(400.0));  // clamped
  CHECK(c.f0_hz[3] == 0.0);
  CHECK(c.voiced[3] == 0);
}

TEST_CASE("normalize/denormalize round trip on voiced frames") {
  const auto contour = pitch::track_pitch(sine(220.0, 1.0));
  const auto stats = pitch::compute_stats(contour);
  const auto round =
      pitch::denormalize_f0(pitch::normalize_f0(contour, stats), stats);
  for (std::int64_t i = 0; i < contour.size(); ++i) {
    if (!contour.voiced[static_cast<std::size_t>(i)]) {
      CHECK(round.f0_hz[static_cast<std::size_t>(i)] == 0.0);
      continue;
    }
    CHECK(std::abs(round.f0_hz[static_cast<std::size_t>(i)] -
                   contour.f0_hz[static_cast<std::size_t>(i)]) < 1e-6);
  }
}

TEST_CASE("contour alignment pads or trims to 4x mel frames") {
  pitch::PitchContour c;
  c.f0_hz.assign(197, 100.0);
  c.voiced.assign(197, 1);
  pitch::align_to_mel_frames(c, 50);
  CHECK(c.size() == 200);
  CHECK(c.f0_hz[199] == 0.0);
  CHECK(c.voiced[199] == 0);
  pitch::align_to_mel_frames(c, 40);
  CHECK(c.size() == 160);
}

TEST_SUITE_END();
