#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dhvc/audio.hpp"
#include "dhvc/io.hpp"
#include "dhvc/pitch.hpp"
#include "test_helpers.hpp"

using namespace dhvc;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out_file =
      fs::path(DHVC_TEST_WORK_DIR) / ("cli_out_" + std::to_string(counter++) + ".txt");
  fs::create_directories(out_file.parent_path());
  const std::string cmd =
      std::string(DHVC_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(raw);
  result.output = io::read_text_file(out_file);
  return result;
}

fs::path work_dir(const std::string& name) {
  const fs::path dir = fs::path(DHVC_TEST_WORK_DIR) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return io::read_text_file(a) == io::read_text_file(b);
}

// Tiny config shared by the CLI training tests.
void write_tiny_config(const fs::path& path, const std::string& extra = "") {
  std::ofstream f(path);
  f << "[nets]\n"
       "pitch_denoiser_channels = 8\n"
       "unet_channels = 8,12,16\n"
       "encoder_channels = 8\n"
       "d_style = 8\n"
       "dilation_depth = 1\n"
       "time_embed_dim = 16\n"
       "[train]\n"
       "batch = 2\n"
       "seg_frames = 16\n"
       "val_per_speaker = 1\n"
       "seed = 3\n"
    << extra;
}

const fs::path& tiny_corpus_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir("cli_corpus");
    const CliResult r =
        run_cli("corpus --speakers 2 --utterances 3 --seed 11 " + d.string());
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

const fs::path& tiny_ckpt_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir("cli_ckpt");
    const fs::path cfg = d / "tiny.cfg";
    write_tiny_config(cfg);
    CliResult r = run_cli("train pitch " + tiny_corpus_dir().string() + " " + d.string() +
                          " --config " + cfg.string() + " --steps 6");
    REQUIRE(r.exit_code == 0);
    r = run_cli("train voice " + tiny_corpus_dir().string() + " " + d.string() +
                " --config " + cfg.string() + " --steps 6");
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("extract produces aligned feature files for a known tone") {
  const fs::path dir = work_dir("cli_extract");
  const fs::path wav = dir / "tone.wav";
  write_wav(wav, testing::sine(220.0, 1.0));

  const CliResult r = run_cli("extract " + wav.string() + " " + dir.string());
  CHECK(r.exit_code == 0);
  const auto contour = io::read_contour_csv(dir / "contour.csv");
  const double median = testing::voiced_median_f0(contour.f0_hz, contour.voiced);
  CHECK(std::abs(median - 220.0) <= 3.0);
  const auto mel = io::read_mel_raw(dir / "mel.raw");
  CHECK(contour.size() == 4 * mel.n_frames);
  CHECK(fs::exists(dir / "mel.csv"));
  CHECK(fs::exists(dir / "content.csv"));
  CHECK(fs::exists(dir / "stats.txt"));
  CHECK(fs::exists(dir / "manifest.txt"));
}

TEST_CASE("extract rejects an empty file with exit 2") {
  const fs::path dir = work_dir("cli_empty");
  const fs::path bad = dir / "empty.wav";
  std::ofstream(bad).close();
  CHECK(run_cli("extract " + bad.string() + " " + dir.string()).exit_code == 2);
}

TEST_CASE("extract rejects a wrong sample rate with exit 2") {
  const fs::path dir = work_dir("cli_rate");
  const fs::path wav = dir / "slow.wav";
  write_wav(wav, testing::sine(200.0, 1.0, 0.3, 8000));
  CHECK(run_cli("extract " + wav.string() + " " + dir.string()).exit_code == 2);
}

TEST_CASE("malformed config keys are named with exit 2") {
  const fs::path dir = work_dir("cli_badcfg");
  const fs::path cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "[train]\nsteps = 5\nnot_a_key = 1\n";
  const fs::path wav = dir / "tone.wav";
  write_wav(wav, testing::sine(220.0, 0.5));
  const CliResult r =
      run_cli("extract " + wav.string() + " " + dir.string() + " --config " + cfg.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("not_a_key") != std::string::npos);
}

TEST_CASE("pitch training writes a loss history and checkpoint") {
  const fs::path dir = tiny_ckpt_dir();
  CHECK(fs::exists(dir / "pitch.ckpt"));
  CHECK(fs::exists(dir / "voice.ckpt"));
  const std::string loss = io::read_text_file(dir / "pitch_loss.csv");
  // Header plus six steps.
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 7);
}

TEST_CASE("pitch training loss decreases on average") {
  const fs::path dir = work_dir("cli_loss_trend");
  const fs::path cfg = dir / "tiny.cfg";
  // Default-schedule optimizer; enough steps to see the smoothed trend.
  write_tiny_config(cfg, "steps = 300\n");
  const CliResult r = run_cli("train pitch " + tiny_corpus_dir().string() + " " +
                              dir.string() + " --config " + cfg.string());
  REQUIRE(r.exit_code == 0);
  const std::string csv = io::read_text_file(dir / "pitch_loss.csv");
  std::istringstream ss(csv);
  std::string line;
  std::getline(ss, line);  // header
  std::vector<double> totals;
  while (std::getline(ss, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    totals.push_back(std::stod(line.substr(a + 1, b - a - 1)));
  }
  REQUIRE(totals.size() == 300);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += totals[i];
    tail += totals[totals.size() - 1 - i];
  }
  CHECK(tail < head);
}

TEST_CASE("resumed training reproduces the uninterrupted loss history") {
  const fs::path dir = work_dir("cli_resume");
  const fs::path cfg = dir / "tiny.cfg";
  write_tiny_config(cfg);
  const std::string corpus = tiny_corpus_dir().string();

  const fs::path full = dir / "full";
  REQUIRE(run_cli("train pitch " + corpus + " " + full.string() + " --config " +
                  cfg.string() + " --steps 6")
              .exit_code == 0);
  const fs::path part = dir / "part";
  REQUIRE(run_cli("train pitch " + corpus + " " + part.string() + " --config " +
                  cfg.string() + " --steps 3")
              .exit_code == 0);
  const fs::path cont = dir / "cont";
  REQUIRE(run_cli("train pitch " + corpus + " " + cont.string() + " --config " +
                  cfg.string() + " --steps 6 --resume " + part.string())
              .exit_code == 0);

  // Rows 3..5 of the full run equal the resumed run's rows bit-for-bit.
  const std::string full_rows = io::read_text_file(full / "pitch_loss.csv");
  const std::string cont_rows = io::read_text_file(cont / "pitch_loss.csv");
  auto tail_rows = [](const std::string& csv, std::size_t skip) {
    std::istringstream ss(csv);
    std::string line, out;
    std::size_t i = 0;
    while (std::getline(ss, line)) {
      if (i++ <= skip) continue;  // header plus skipped rows
      out += line + "\n";
    }
    return out;
  };
  CHECK(tail_rows(full_rows, 3) == tail_rows(cont_rows, 0));
  CHECK(same_bytes(full / "pitch.ckpt", cont / "pitch.ckpt"));
}

TEST_CASE("training with an absurd learning rate exits 3") {
  const fs::path dir = work_dir("cli_diverge");
  const fs::path cfg = dir / "tiny.cfg";
  write_tiny_config(cfg, "lr = 1e300\n");
  const CliResult r = run_cli("train pitch " + tiny_corpus_dir().string() + " " +
                              dir.string() + " --config " + cfg.string() + " --steps 4");
  CHECK(r.exit_code == 3);
}

TEST_CASE("convert works at 6 and 30 steps and is bit-deterministic") {
  const fs::path dir = work_dir("cli_convert");
  const fs::path src = dir / "src.wav";
  const fs::path tgt = dir / "tgt.wav";
  // Corpus WAVs serve as realistic inputs.
  fs::copy_file(tiny_corpus_dir() / "spk000_utt000.wav", src);
  fs::copy_file(tiny_corpus_dir() / "spk001_utt001.wav", tgt);
  const std::string ckpt = tiny_ckpt_dir().string();

  const fs::path out6 = dir / "out6";
  const CliResult r6 = run_cli("convert " + src.string() + " " + tgt.string() + " " + ckpt +
                               " " + out6.string() + " --steps 6 --seed 9 --trajectory");
  CHECK(r6.exit_code == 0);
  CHECK(fs::exists(out6 / "f0.csv"));
  CHECK(fs::exists(out6 / "mel.raw"));
  CHECK(fs::exists(out6 / "trajectory.csv"));

  const fs::path out30 = dir / "out30";
  CHECK(run_cli("convert " + src.string() + " " + tgt.string() + " " + ckpt + " " +
                out30.string() + " --steps 30 --seed 9")
            .exit_code == 0);

  const fs::path again = dir / "again6";
  REQUIRE(run_cli("convert " + src.string() + " " + tgt.string() + " " + ckpt + " " +
                  again.string() + " --steps 6 --seed 9 --trajectory")
              .exit_code == 0);
  CHECK(same_bytes(out6 / "f0.csv", again / "f0.csv"));
  CHECK(same_bytes(out6 / "mel.raw", again / "mel.raw"));
  CHECK(same_bytes(out6 / "trajectory.csv", again / "trajectory.csv"));
}

TEST_CASE("convert with a missing checkpoint exits 2; unvoiced source exits 4") {
  const fs::path dir = work_dir("cli_convert_err");
  const fs::path src = dir / "src.wav";
  const fs::path tgt = dir / "tgt.wav";
  fs::copy_file(tiny_corpus_dir() / "spk000_utt000.wav", src);
  fs::copy_file(tiny_corpus_dir() / "spk001_utt000.wav", tgt);
  CHECK(run_cli("convert " + src.string() + " " + tgt.string() + " " + dir.string() + " " +
                (dir / "out").string() + " --steps 6")
            .exit_code == 2);

  const fs::path quiet = dir / "quiet.wav";
  write_wav(quiet, testing::silence(1.0));
  CHECK(run_cli("convert " + quiet.string() + " " + tgt.string() + " " +
                tiny_ckpt_dir().string() + " " + (dir / "out2").string() + " --steps 6")
            .exit_code == 4);
}

TEST_CASE("oracle subcommand exit codes") {
  CHECK(run_cli("oracle marginal").exit_code == 0);
  CHECK(run_cli("oracle nosuchsuite").exit_code == 2);
  CHECK(run_cli("oracle sampler --mutate-drift-sign").exit_code == 1);
}

TEST_CASE("identical seeds reproduce bit-identical corpus artifacts") {
  const fs::path a = work_dir("cli_det_a");
  const fs::path b = work_dir("cli_det_b");
  REQUIRE(run_cli("corpus --speakers 1 --utterances 2 --seed 5 " + a.string()).exit_code ==
          0);
  REQUIRE(run_cli("corpus --speakers 1 --utterances 2 --seed 5 " + b.string()).exit_code ==
          0);
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = b / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(same_bytes(entry.path(), other));
  }
}

TEST_SUITE_END();
