#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dhvc/corpus.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/pipeline.hpp"
#include "test_helpers.hpp"

using namespace dhvc;
namespace pl = dhvc::pipeline;

namespace {

nets::ModelConfig tiny_model() {
  nets::ModelConfig cfg;
  cfg.pitch_denoiser_channels = 8;
  cfg.unet_channels = {8, 12, 16};
  cfg.encoder_channels = 8;
  cfg.d_style = 8;
  cfg.dilation_depth = 1;
  cfg.time_embed_dim = 16;
  return cfg;
}

pl::TrainConfig tiny_train_config() {
  pl::TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.batch = 2;
  cfg.seg_frames = 16;
  cfg.val_per_speaker = 1;
  cfg.adam.lr0 = 1e-4;
  cfg.seed = 7;
  return cfg;
}

const pl::Corpus& tiny_corpus() {
  static const pl::Corpus corpus = [] {
    const auto fb = dsp::MelFilterbank::make();
    return pl::generate_corpus(2, 3, 11, fb);
  }();
  return corpus;
}

}  // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("corpus utterances track their generating schedule") {
  const auto& corpus = tiny_corpus();
  REQUIRE(corpus.utterances.size() == 6);
  for (const auto& utt : corpus.utterances) {
    REQUIRE(utt.schedule_mean_hz > 0.0);
    const auto stats = pitch::compute_stats(utt.contour);
    CHECK(std::abs(stats.mean_hz - utt.schedule_mean_hz) <= 10.0);
  }
}

TEST_CASE("corpus respects frame-alignment invariants") {
  for (const auto& utt : tiny_corpus().utterances) {
    CHECK(utt.contour.size() == 4 * utt.mel.n_frames);
    CHECK(utt.content.n_frames == utt.mel.n_frames);
    for (std::int64_t i = 0; i < utt.contour.size(); ++i)
      CHECK((utt.contour.f0_hz[static_cast<std::size_t>(i)] == 0.0) ==
            (utt.contour.voiced[static_cast<std::size_t>(i)] == 0));
  }
}

TEST_CASE("speakers with bases 120 and 240 produce disjoint tracked ranges") {
  const auto fb = dsp::MelFilterbank::make();
  pl::SyntheticSpeaker low = pl::make_speakers(2, 5)[0];
  pl::SyntheticSpeaker high = low;
  low.f0_base_hz = 120.0;
  low.f0_range_hz = 8.0;
  low.vibrato_depth_hz = 2.0;
  high.f0_base_hz = 240.0;
  high.f0_range_hz = 16.0;
  high.vibrato_depth_hz = 4.0;

  double low_max = 0.0, high_min = 1e9;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto a = pl::analyze_utterance(pl::synthesize_utterance(low, seed), 0, fb);
    const auto b = pl::analyze_utterance(pl::synthesize_utterance(high, seed), 1, fb);
    for (std::int64_t i = 0; i < a.contour.size(); ++i)
      if (a.contour.voiced[static_cast<std::size_t>(i)])
        low_max = std::max(low_max, a.contour.f0_hz[static_cast<std::size_t>(i)]);
    for (std::int64_t i = 0; i < b.contour.size(); ++i)
      if (b.contour.voiced[static_cast<std::size_t>(i)])
        high_min = std::min(high_min, b.contour.f0_hz[static_cast<std::size_t>(i)]);
  }
  CHECK(low_max < high_min);
}

TEST_CASE("corpus generation is deterministic in the seed") {
  const auto fb = dsp::MelFilterbank::make();
  const auto a = pl::generate_corpus(2, 2, 42, fb);
  const auto b = pl::generate_corpus(2, 2, 42, fb);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(a.utterances[i].audio.samples == b.utterances[i].audio.samples);
    CHECK(a.utterances[i].mel.values == b.utterances[i].mel.values);
    CHECK(a.utterances[i].contour.f0_hz == b.utterances[i].contour.f0_hz);
  }
}

TEST_CASE("corpus save/load round trip") {
  const auto dir = std::filesystem::path(DHVC_TEST_WORK_DIR) / "corpus_rt";
  std::filesystem::remove_all(dir);
  const auto& corpus = tiny_corpus();
  pl::save_corpus(dir, corpus);
  const auto loaded = pl::load_corpus(dir);
  REQUIRE(loaded.utterances.size() == corpus.utterances.size());
  CHECK(loaded.speakers.size() == corpus.speakers.size());
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    CHECK(loaded.utterances[i].speaker_id == corpus.utterances[i].speaker_id);
    CHECK(loaded.utterances[i].contour.f0_hz.size() ==
          corpus.utterances[i].contour.f0_hz.size());
    CHECK(loaded.utterances[i].mel.n_frames == corpus.utterances[i].mel.n_frames);
    // WAV is 16-bit quantized; digital silence must round-trip exactly.
    REQUIRE(loaded.utterances[i].audio.samples.size() ==
            corpus.utterances[i].audio.samples.size());
  }
  CHECK(loaded.speakers[1].f0_base_hz ==
        doctest::Approx(corpus.speakers[1].f0_base_hz).epsilon(1e-9));
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  const auto& corpus = tiny_corpus();
  const auto cfg = tiny_train_config();

  pl::TrainState a, b;
  pl::train_diffpitch(corpus, cfg, 4, a);
  pl::train_diffpitch(corpus, cfg, 4, b);
  REQUIRE(a.pitch_stage.loss_history.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.pitch_stage.loss_history[i].total == b.pitch_stage.loss_history[i].total);
    CHECK(a.pitch_stage.loss_history[i].recon == b.pitch_stage.loss_history[i].recon);
  }
  for (const auto& [name, t] : a.pitch_stage.params.tensors)
    CHECK(t.data == b.pitch_stage.params.tensors.at(name).data);
}

TEST_CASE("voice training runs and mask ratio zero is accepted") {
  const auto& corpus = tiny_corpus();
  auto cfg = tiny_train_config();
  cfg.mask_ratio = 0.0;
  pl::TrainState state;
  pl::train_diffvoice(corpus, cfg, 2, state);
  CHECK(state.voice_stage.step == 2);
  cfg.mask_ratio = 0.3;
  pl::TrainState masked;
  pl::train_diffvoice(corpus, cfg, 2, masked);
  CHECK(masked.voice_stage.step == 2);
}

TEST_CASE("stage checkpoint resume matches the uninterrupted run bit-exactly") {
  const auto& corpus = tiny_corpus();
  const auto cfg = tiny_train_config();
  const auto dir = std::filesystem::path(DHVC_TEST_WORK_DIR) / "resume";
  std::filesystem::create_directories(dir);

  pl::TrainState full;
  pl::train_diffpitch(corpus, cfg, 6, full);

  pl::TrainState half;
  pl::train_diffpitch(corpus, cfg, 3, half);
  pl::save_stage(dir / "pitch.ckpt", half.pitch_stage, half.model, half.sched, half.seed);

  pl::TrainState resumed;
  resumed.model = cfg.model;
  resumed.sched = cfg.sched;
  resumed.seed = cfg.seed;
  pl::load_stage(dir / "pitch.ckpt", resumed.pitch_stage, resumed.model, resumed.sched,
                 resumed.seed);
  CHECK(resumed.pitch_stage.step == 3);
  pl::train_diffpitch(corpus, cfg, 6, resumed);

  for (const auto& [name, t] : full.pitch_stage.params.tensors)
    CHECK(t.data == resumed.pitch_stage.params.tensors.at(name).data);
  // Loss rows 3..5 of the full run equal the resumed run's rows.
  REQUIRE(resumed.pitch_stage.loss_history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(full.pitch_stage.loss_history[i + 3].total ==
          resumed.pitch_stage.loss_history[i].total);
}

TEST_CASE("convert requires trained stages and a voiced source") {
  const auto& corpus = tiny_corpus();
  diffusion::SamplerConfig sc;
  sc.n_steps = 4;

  pl::TrainState untrained;
  CHECK_THROWS_AS(
      pl::convert(corpus.utterances[0], corpus.utterances[1], untrained, sc),
      UninitializedModelError);

  const auto cfg = tiny_train_config();
  pl::TrainState state;
  pl::train_diffpitch(corpus, cfg, 2, state);
  pl::train_diffvoice(corpus, cfg, 2, state);

  pl::Utterance unvoiced = corpus.utterances[0];
  std::fill(unvoiced.contour.f0_hz.begin(), unvoiced.contour.f0_hz.end(), 0.0);
  std::fill(unvoiced.contour.voiced.begin(), unvoiced.contour.voiced.end(), 0);
  CHECK_THROWS_AS(pl::convert(unvoiced, corpus.utterances[1], state, sc),
                  NoVoicedFramesError);
}

TEST_CASE("convert output respects the frame-alignment contract") {
  const auto& corpus = tiny_corpus();
  const auto cfg = tiny_train_config();
  pl::TrainState state;
  pl::train_diffpitch(corpus, cfg, 3, state);
  pl::train_diffvoice(corpus, cfg, 3, state);

  diffusion::SamplerConfig sc;
  sc.n_steps = 4;
  sc.seed = 5;
  const auto& source = corpus.utterances[0];
  const auto& target = corpus.utterances[4];
  const auto result = pl::convert(source, target, state, sc);

  CHECK(result.mel.n_frames == source.mel.n_frames);
  CHECK(result.f0.size() == 4 * result.mel.n_frames);
  // Voicing pattern of the output equals the source voicing exactly.
  CHECK(result.f0.voiced == source.contour.voiced);
  for (std::int64_t i = 0; i < result.f0.size(); ++i) {
    if (result.f0.voiced[static_cast<std::size_t>(i)]) {
      CHECK(result.f0.f0_hz[static_cast<std::size_t>(i)] >= 60.0);
      CHECK(result.f0.f0_hz[static_cast<std::size_t>(i)] <= 400.0);
    } else {
      CHECK(result.f0.f0_hz[static_cast<std::size_t>(i)] == 0.0);
    }
  }

  // Deterministic per seed.
  const auto again = pl::convert(source, target, state, sc);
  CHECK(again.f0.f0_hz == result.f0.f0_hz);
  CHECK(again.mel.values == result.mel.values);
}

TEST_CASE("f0_baseline_compare report contract") {
  const auto& corpus = tiny_corpus();
  const auto cfg = tiny_train_config();
  pl::TrainState state;
  pl::train_diffpitch(corpus, cfg, 3, state);

  diffusion::SamplerConfig sc;
  sc.n_steps = 4;
  const auto& source = corpus.utterances[1];
  const auto& target = corpus.utterances[5];
  const auto report = pl::f0_baseline_compare(source, target, state, sc);

  CHECK(report.denorm.contour.size() == source.contour.size());
  CHECK(report.encoder_only.contour.size() == source.contour.size());
  CHECK(report.diffpitch.contour.size() == source.contour.size());
  // The denorm baseline reproduces the target mean by construction (no clamping
  // occurred for these synthetic ranges).
  CHECK(report.denorm.mean_voiced_hz ==
        doctest::Approx(report.target_mean_hz).epsilon(1e-6));

  const auto csv = std::filesystem::path(DHVC_TEST_WORK_DIR) / "f0_compare.csv";
  pl::write_f0_compare_csv(csv, report);
  CHECK(std::filesystem::exists(csv));
}

TEST_CASE("pitch reconstruction loss is zero when the prior equals the target") {
  // Eq.-1-style L1 with Z_p == X_p.
  nets::Tape tape;
  const auto a = tape.leaf(Tensor({1, 40}, 0.7));
  const auto b = tape.leaf(Tensor({1, 40}, 0.7));
  CHECK(tape.val(tape.mean_abs_diff(a, b))[0] == 0.0);
}

TEST_CASE("training diverges loudly on an absurd learning rate") {
  const auto& corpus = tiny_corpus();
  auto cfg = tiny_train_config();
  cfg.adam.lr0 = 1e300;
  pl::TrainState state;
  CHECK_THROWS_AS(pl::train_diffpitch(corpus, cfg, 4, state), DivergenceError);
}

TEST_SUITE_END();
