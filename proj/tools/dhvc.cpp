// dhvc -- batch CLI for the hierarchical diffusion voice-conversion library:
// corpus generation, feature extraction, stage training, conversion, and the
// oracle verification suites.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "dhvc/audio.hpp"
#include "dhvc/config.hpp"
#include "dhvc/corpus.hpp"
#include "dhvc/diffusion.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/io.hpp"
#include "dhvc/pipeline.hpp"
#include "dhvc/rng.hpp"
#include "dhvc/verify.hpp"
#include "dhvc/version.hpp"

namespace fs = std::filesystem;
using namespace dhvc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitPrecondition = 4;

struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::int64_t steps = 0;
  bool steps_set = false;
  double mask_ratio = -1.0;
  bool paper_scale = false;
};

cli::RunConfig make_config(const Options& opt) {
  cli::RunConfig cfg;
  if (!opt.config_path.empty()) cfg = cli::load_config(opt.config_path);
  if (opt.seed_set) {
    cfg.seed = opt.seed;
    cfg.sample_seed = opt.seed;
  }
  if (opt.steps_set) {
    cfg.steps = opt.steps;
    cfg.sample_steps = static_cast<int>(opt.steps);
  }
  if (opt.mask_ratio >= 0.0) cfg.mask_ratio = opt.mask_ratio;
  if (opt.paper_scale) cfg.paper_scale = true;
  return cfg;
}

pipeline::TrainConfig train_config(const cli::RunConfig& cfg) {
  pipeline::TrainConfig tc;
  tc.model = cfg.effective_model();
  tc.sched = cfg.sched;
  tc.adam = cfg.adam;
  tc.batch = cfg.batch;
  tc.seg_frames = cfg.seg_frames;
  tc.mask_ratio = cfg.mask_ratio;
  tc.val_per_speaker = cfg.val_per_speaker;
  tc.seed = cfg.seed;
  return tc;
}

int cmd_corpus(const Options& opt, int speakers, int utterances, const std::string& out) {
  const cli::RunConfig cfg = make_config(opt);
  const auto fb = dsp::MelFilterbank::make(80, dsp::kWindowSamples, kCanonicalSampleRate,
                                           cfg.mel_f_min_hz, cfg.mel_f_max_hz);
  const pipeline::Corpus corpus = pipeline::generate_corpus(speakers, utterances, cfg.seed, fb);
  fs::create_directories(out);
  pipeline::save_corpus(out, corpus);
  cli::write_manifest(fs::path(out) / "manifest.txt", cfg, "corpus",
                      {{"speakers", std::to_string(speakers)},
                       {"utterances_per_speaker", std::to_string(utterances)},
                       {"seed", std::to_string(cfg.seed)}});
  std::cout << "corpus: " << corpus.utterances.size() << " utterances from " << speakers
            << " speakers -> " << out << "\n";
  return kExitOk;
}

int cmd_extract(const Options& opt, const std::string& audio_path, const std::string& out) {
  const cli::RunConfig cfg = make_config(opt);
  const AudioBuffer audio = read_wav(audio_path);
  require_canonical_rate(audio);
  const auto fb = dsp::MelFilterbank::make(80, dsp::kWindowSamples, kCanonicalSampleRate,
                                           cfg.mel_f_min_hz, cfg.mel_f_max_hz);
  const pipeline::Utterance utt =
      pipeline::analyze_utterance(audio, /*speaker_id=*/-1, fb, std::nullopt, cfg.tracker);

  fs::create_directories(out);
  io::write_mel_csv(fs::path(out) / "mel.csv", utt.mel);
  io::write_mel_raw(fs::path(out) / "mel.raw", utt.mel);
  io::write_contour_csv(fs::path(out) / "contour.csv", utt.contour);
  io::write_content_csv(fs::path(out) / "content.csv", utt.content);
  std::ostringstream stats;
  stats << "mean_hz=" << utt.stats.mean_hz << "\nstd_hz=" << utt.stats.std_hz
        << "\nmel_frames=" << utt.mel.n_frames << "\ncontour_frames=" << utt.contour.size()
        << "\n";
  io::write_text_file(fs::path(out) / "stats.txt", stats.str());
  cli::write_manifest(fs::path(out) / "manifest.txt", cfg, "extract",
                      {{"input", audio_path}});
  std::cout << "extract: " << utt.mel.n_frames << " mel frames, " << utt.contour.size()
            << " contour frames -> " << out << "\n";
  return kExitOk;
}

int cmd_train(const Options& opt, const std::string& stage, const std::string& corpus_dir,
              const std::string& out, const std::string& resume) {
  const cli::RunConfig cfg = make_config(opt);
  const pipeline::TrainConfig tc = train_config(cfg);
  const pipeline::Corpus corpus = pipeline::load_corpus(corpus_dir);

  pipeline::TrainState state;
  state.model = tc.model;
  state.sched = tc.sched;
  state.seed = tc.seed;

  const bool pitch = stage == "pitch";
  const std::string ckpt_name = pitch ? "pitch.ckpt" : "voice.ckpt";
  pipeline::StageState& st = pitch ? state.pitch_stage : state.voice_stage;
  if (!resume.empty()) {
    nets::ModelConfig model = state.model;
    NoiseSchedule sched = state.sched;
    std::uint64_t seed = state.seed;
    pipeline::load_stage(fs::path(resume) / ckpt_name, st, model, sched, seed);
    state.model = model;
    state.sched = sched;
    state.seed = seed;
  }

  if (pitch)
    pipeline::train_diffpitch(corpus, tc, cfg.steps, state);
  else
    pipeline::train_diffvoice(corpus, tc, cfg.steps, state);

  fs::create_directories(out);
  pipeline::save_stage(fs::path(out) / ckpt_name, st, state.model, state.sched, state.seed);
  pipeline::write_loss_csv(fs::path(out) / (stage + "_loss.csv"), st.loss_history);
  cli::write_manifest(fs::path(out) / ("train_" + stage + "_manifest.txt"), cfg,
                      "train " + stage,
                      {{"corpus", corpus_dir},
                       {"resume", resume.empty() ? "-" : resume},
                       {"final_step", std::to_string(st.step)}});
  const double last = st.loss_history.empty() ? 0.0 : st.loss_history.back().total;
  std::cout << "train " << stage << ": step " << st.step << ", last loss " << last
            << " -> " << out << "\n";
  return kExitOk;
}

int cmd_convert(const Options& opt, const std::string& source_path,
                const std::string& target_path, const std::string& ckpt_dir,
                const std::string& out, bool with_audio, bool with_trajectory) {
  const cli::RunConfig cfg = make_config(opt);
  pipeline::TrainState state;
  {
    nets::ModelConfig model;
    NoiseSchedule sched;
    std::uint64_t seed = 0;
    pipeline::load_stage(fs::path(ckpt_dir) / "pitch.ckpt", state.pitch_stage, model, sched,
                         seed);
    pipeline::load_stage(fs::path(ckpt_dir) / "voice.ckpt", state.voice_stage, model, sched,
                         seed);
    state.model = model;
    state.sched = sched;
    state.seed = seed;
  }

  const auto fb = dsp::MelFilterbank::make(80, dsp::kWindowSamples, kCanonicalSampleRate,
                                           cfg.mel_f_min_hz, cfg.mel_f_max_hz);
  const AudioBuffer source_audio = read_wav(source_path);
  require_canonical_rate(source_audio);
  const AudioBuffer target_audio = read_wav(target_path);
  require_canonical_rate(target_audio);
  const pipeline::Utterance source =
      pipeline::analyze_utterance(source_audio, -1, fb, std::nullopt, cfg.tracker);
  const pipeline::Utterance target =
      pipeline::analyze_utterance(target_audio, -1, fb, std::nullopt, cfg.tracker);

  diffusion::SamplerConfig sc;
  sc.n_steps = cfg.sample_steps;
  sc.temperature = cfg.temperature;
  sc.seed = cfg.sample_seed;
  const pipeline::ConvertResult result = pipeline::convert(source, target, state, sc);

  fs::create_directories(out);
  io::write_contour_csv(fs::path(out) / "f0.csv", result.f0);
  io::write_mel_csv(fs::path(out) / "mel.csv", result.mel);
  io::write_mel_raw(fs::path(out) / "mel.raw", result.mel);
  if (with_trajectory) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < result.pitch_trace.t.size(); ++i)
      rows.push_back({0.0, result.pitch_trace.t[i], result.pitch_trace.x_rms[i]});
    for (std::size_t i = 0; i < result.mel_trace.t.size(); ++i)
      rows.push_back({1.0, result.mel_trace.t[i], result.mel_trace.x_rms[i]});
    io::write_table_csv(fs::path(out) / "trajectory.csv", {"stage", "t", "x_rms"}, rows);
  }
  if (with_audio) {
    const auto gl = dsp::griffin_lim(result.mel, fb, cfg.griffin_lim_iterations,
                                     cfg.sample_seed);
    write_wav(fs::path(out) / "converted.wav", gl.audio);
  }
  cli::write_manifest(fs::path(out) / "manifest.txt", cfg, "convert",
                      {{"source", source_path},
                       {"target", target_path},
                       {"checkpoints", ckpt_dir},
                       {"sample_steps", std::to_string(sc.n_steps)}});
  std::cout << "convert: " << result.mel.n_frames << " mel frames -> " << out << "\n";
  return kExitOk;
}

int cmd_oracle(const std::string& suite, const std::string& csv, bool mutate_drift) {
  const auto records = verify::run_suite(
      suite, mutate_drift ? verify::Mutation::flip_drift_sign : verify::Mutation::none);
  verify::print_table(std::cout, records);
  if (!csv.empty()) verify::write_csv(csv, records);
  if (verify::all_pass(records)) {
    std::cout << "oracle: all " << records.size() << " checks passed\n";
    return kExitOk;
  }
  int failures = 0;
  for (const auto& r : records) failures += r.pass ? 0 : 1;
  std::cout << "oracle: " << failures << " of " << records.size() << " checks FAILED\n";
  return kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical two-stage diffusion voice conversion (pitch contour "
               "diffusion feeding a mel-spectrogram diffusion)"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "configuration file");
    sub->add_option("--seed", opt.seed, "random seed")->each([&](const std::string&) {
      opt.seed_set = true;
    });
    sub->add_option("--steps", opt.steps, "step count (training or sampling)")
        ->each([&](const std::string&) { opt.steps_set = true; });
    sub->add_option("--mask-ratio", opt.mask_ratio, "frequency-masking ratio");
    sub->add_flag("--paper-scale", opt.paper_scale, "use the full-scale model widths");
  };

  auto* corpus = app.add_subcommand("corpus", "generate a synthetic-speaker corpus");
  int n_speakers = 8, n_utterances = 40;
  std::string corpus_out;
  corpus->add_option("--speakers", n_speakers, "speaker count");
  corpus->add_option("--utterances", n_utterances, "utterances per speaker");
  corpus->add_option("out", corpus_out, "output directory")->required();
  add_common(corpus);

  auto* extract = app.add_subcommand("extract", "analyze a WAV into feature files");
  std::string extract_audio, extract_out;
  extract->add_option("audio", extract_audio, "16 kHz mono PCM16 WAV")->required();
  extract->add_option("out", extract_out, "output directory")->required();
  add_common(extract);

  auto* train = app.add_subcommand("train", "train one diffusion stage");
  std::string train_stage, train_corpus, train_out, train_resume;
  train->add_option("stage", train_stage, "pitch|voice")
      ->required()
      ->check(CLI::IsMember({"pitch", "voice"}));
  train->add_option("corpus", train_corpus, "corpus directory")->required();
  train->add_option("out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint directory to resume from");
  add_common(train);

  auto* convert = app.add_subcommand("convert", "convert source speech to the target style");
  std::string conv_source, conv_target, conv_ckpt, conv_out;
  bool conv_audio = false, conv_traj = false;
  convert->add_option("source", conv_source, "source WAV")->required();
  convert->add_option("target", conv_target, "target-style WAV")->required();
  convert->add_option("checkpoints", conv_ckpt, "directory with pitch.ckpt and voice.ckpt")
      ->required();
  convert->add_option("out", conv_out, "output directory")->required();
  convert->add_flag("--audio", conv_audio, "also write a Griffin-Lim WAV");
  convert->add_flag("--trajectory", conv_traj, "dump per-step sampler norms as CSV");
  add_common(convert);

  auto* oracle = app.add_subcommand("oracle", "run verification suites");
  std::string oracle_suite = "all", oracle_csv;
  bool mutate_drift = false;
  oracle->add_option("suite", oracle_suite, "all|marginal|score|sampler|gradcheck");
  oracle->add_option("--csv", oracle_csv, "write per-check statistics as CSV");
  oracle->add_flag("--mutate-drift-sign", mutate_drift,
                   "verification hook: flip the reverse-drift sign; the sampler "
                   "suite must then fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (corpus->parsed()) return cmd_corpus(opt, n_speakers, n_utterances, corpus_out);
    if (extract->parsed()) return cmd_extract(opt, extract_audio, extract_out);
    if (train->parsed())
      return cmd_train(opt, train_stage, train_corpus, train_out, train_resume);
    if (convert->parsed())
      return cmd_convert(opt, conv_source, conv_target, conv_ckpt, conv_out, conv_audio,
                         conv_traj);
    if (oracle->parsed()) return cmd_oracle(oracle_suite, oracle_csv, mutate_drift);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const NoVoicedFramesError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const UninitializedModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
