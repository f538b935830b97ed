// dhvc/config.hpp -- structured-text run configuration.
//
// INI-style sections (dsp, pitch, diffusion, nets, train, sample) with
// defaults equal to the canonical values; unknown sections or keys are
// rejected, and every effective value is echoed into the run manifest.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dhvc/nets.hpp"
#include "dhvc/pipeline.hpp"
#include "dhvc/pitch.hpp"

namespace dhvc::cli {

struct RunConfig {
  // [dsp]
  int d_content = 13;
  double mel_f_min_hz = 0.0;
  double mel_f_max_hz = 8000.0;
  int griffin_lim_iterations = 60;
  // [pitch]
  pitch::TrackerConfig tracker;
  // [diffusion]
  NoiseSchedule sched;
  double mask_ratio = 0.3;
  // [nets]
  nets::ModelConfig model;
  bool paper_scale = false;
  // [train]
  std::int64_t steps = 2000;
  int batch = 8;
  int seg_frames = 32;
  int val_per_speaker = 4;
  nets::AdamConfig adam;
  std::uint64_t seed = 1;
  // [sample]
  int sample_steps = 6;
  double temperature = 1.0;
  std::uint64_t sample_seed = 1;

  // Effective model config (applies the paper-scale preset when requested).
  nets::ModelConfig effective_model() const;
  // Canonical "section.key=value" dump, one per line, sorted.
  std::string dump() const;
};

// Throws ConfigError naming the offending section/key/value.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Run manifest: binary version, config hash, seed, free-form inputs.
void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs);

}  // namespace dhvc::cli
