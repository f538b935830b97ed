// dhvc/pipeline.hpp -- hierarchical training and inference: pitch-stage
// training (encoder L1 + score matching), mel-stage training with the masked
// data-driven prior, and the end-to-end conversion procedure.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhvc/corpus.hpp"
#include "dhvc/diffusion.hpp"
#include "dhvc/nets.hpp"
#include "dhvc/schedule.hpp"

namespace dhvc::pipeline {

struct TrainConfig {
  nets::ModelConfig model;
  NoiseSchedule sched;
  nets::AdamConfig adam;
  int batch = 8;
  int seg_frames = 32;  // mel frames per training crop, multiple of 4
  double mask_ratio = 0.3;
  int val_per_speaker = 4;  // trailing utterances per speaker held out
  std::uint64_t seed = 1;
};

struct LossRecord {
  std::int64_t step;
  double total;
  double recon;  // L1 term (Z vs X)
  double dsm;    // weighted score-matching term
};

struct StageState {
  nets::ParamStore params;
  nets::AdamState adam;
  std::int64_t step = 0;
  bool ready = false;
  std::vector<LossRecord> loss_history;  // of the current run only
};

struct TrainState {
  nets::ModelConfig model;
  NoiseSchedule sched;
  std::uint64_t seed = 1;
  StageState pitch_stage;
  StageState voice_stage;
};

// Runs until stage.step reaches target_steps (no-op if already there).
// Throws DivergenceError with the step index on a non-finite loss.
void train_diffpitch(const Corpus& corpus, const TrainConfig& cfg, std::int64_t target_steps,
                     TrainState& state);
void train_diffvoice(const Corpus& corpus, const TrainConfig& cfg, std::int64_t target_steps,
                     TrainState& state);

// Training/validation split used by the trainers and eval helpers.
bool is_validation_utterance(const Corpus& corpus, std::size_t index, int val_per_speaker);

struct ConvertResult {
  pitch::PitchContour f0;
  dsp::MelSpectrogram mel;
  diffusion::SamplerTrace pitch_trace;
  diffusion::SamplerTrace mel_trace;
};

// Figure-1 procedure: style from target, pitch prior from normalized source
// F0, DiffPitch sampling in log(F0+1), source-filter prior, DiffVoice
// sampling; the converted contour reuses the source voicing mask.
ConvertResult convert(const Utterance& source, const Utterance& target,
                      const TrainState& state, const diffusion::SamplerConfig& cfg);

struct F0Method {
  std::string name;
  pitch::PitchContour contour;
  double mean_voiced_hz = 0.0;
  double rmse_vs_source_hz = 0.0;  // over source-voiced frames
};

struct F0CompareReport {
  F0Method denorm;
  F0Method encoder_only;
  F0Method diffpitch;
  double target_mean_hz = 0.0;
};

F0CompareReport f0_baseline_compare(const Utterance& source, const Utterance& target,
                                    const TrainState& state,
                                    const diffusion::SamplerConfig& cfg);
void write_f0_compare_csv(const std::filesystem::path& path, const F0CompareReport& report);

// ---------------------------------------------------------------------------
// persistence: two checkpoint files plus a UTF-8 run manifest.

void save_stage(const std::filesystem::path& path, const StageState& stage,
                const nets::ModelConfig& model, const NoiseSchedule& sched,
                std::uint64_t seed);
void load_stage(const std::filesystem::path& path, StageState& stage,
                nets::ModelConfig& model, NoiseSchedule& sched, std::uint64_t& seed);
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

// ---------------------------------------------------------------------------
// evaluation helpers

// Mean L1(Z_p, X_p) over held-out (or training) utterances.
double eval_pitch_encoder_l1(const Corpus& corpus, const TrainState& state,
                             int val_per_speaker, bool validation);
// Mean L1(Z_m, X_mel) likewise.
double eval_source_filter_l1(const Corpus& corpus, const TrainState& state,
                             int val_per_speaker, bool validation);

struct MaskedReconReport {
  double model_l1 = 0.0;  // sampled mel vs truth on the masked cells
  double prior_l1 = 0.0;  // unmasked encoder prior vs truth on the same cells
  std::int64_t masked_cells = 0;
};

// Masks the prior, samples DiffVoice from the masked prior, and scores the
// masked region against ground truth.
MaskedReconReport masked_recon_eval(const Utterance& utt, const TrainState& state,
                                    double ratio, const diffusion::SamplerConfig& cfg);

struct SweepRow {
  double ratio;
  double final_loss;       // mean total loss over the last 50 steps
  double val_recon_l1;     // encoder prior L1 on validation
  double masked_model_l1;  // masked-region reconstruction of the trained model
  double masked_prior_l1;
};

// Short fresh DiffVoice run per ratio; no assertion on the trend.
std::vector<SweepRow> masking_ratio_sweep(const Corpus& corpus, TrainConfig cfg,
                                          std::int64_t steps,
                                          const std::vector<double>& ratios);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace dhvc::pipeline
