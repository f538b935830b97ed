// dhvc/nets.hpp -- parametric score estimators and encoders: a dilated-conv
// 1-D denoiser and encoder family (WaveNet-style gated blocks), a 3-level
// 2-D U-Net mel denoiser, a statistics-pooling style embedder, and the AdamW
// optimizer they train with.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "dhvc/dsp.hpp"
#include "dhvc/schedule.hpp"
#include "dhvc/tape.hpp"
#include "dhvc/tensor.hpp"

namespace dhvc::nets {

struct ModelConfig {
  int pitch_denoiser_channels = 16;
  std::array<int, 3> unet_channels = {16, 32, 64};
  int encoder_channels = 32;
  int d_style = 32;
  int dilation_depth = 3;  // dilations 1,2,...,2^depth per cycle, two cycles
  int time_embed_dim = 32;
  int d_content = 13;
  int n_mels = 80;

  static ModelConfig paper_scale();
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Sinusoidal embedding of diffusion time t in [0,1]; dim must be even.
Tensor time_embedding(double t, int dim);

// Per-bin mean then standard deviation over frames -> [2*n_mels].
// Throws InvalidInputError if the mel has fewer than 2 frames.
Tensor mel_stats(const dsp::MelSpectrogram& mel);

// Parameter-group construction. Pitch-stage prefixes: p_den, p_enc, p_sty;
// voice-stage prefixes: v_den, v_src, v_ftr, v_sty. Each stage carries its
// own style embedder so the stages stay independently trainable.
void init_pitch_stage(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed);
void init_voice_stage(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed);

// Tape forwards. Tensor layouts: contours [1, L], mel [frames, n_mels],
// style vector [d_style].
//
// The denoisers predict the injected noise internally and return it scaled by
// -1/sqrt(variance(t)), so their public output is the score itself while the
// trainable head stays O(1) at every t.
Tape::NodeId style_embed_forward(Tape& tape, ParamBinder& params, const ModelConfig& cfg,
                                 const std::string& prefix, Tape::NodeId stats);
Tape::NodeId pitch_score_forward(Tape& tape, ParamBinder& params, const ModelConfig& cfg,
                                 const NoiseSchedule& sched, Tape::NodeId x_t,
                                 Tape::NodeId z, Tape::NodeId s, double t);
Tape::NodeId pitch_encoder_forward(Tape& tape, ParamBinder& params, const ModelConfig& cfg,
                                   Tape::NodeId norm_f0, Tape::NodeId s);

struct SourceFilterNodes {
  Tape::NodeId z_src;
  Tape::NodeId z_ftr;
  Tape::NodeId z_m;  // z_src + z_ftr, all mel-shaped [frames, n_mels]
};
// content: [d_content, frames]; f0_log: [1, 4*frames] (log(f0+1) scale).
SourceFilterNodes source_filter_forward(Tape& tape, ParamBinder& params,
                                        const ModelConfig& cfg, Tape::NodeId content,
                                        Tape::NodeId f0_log, Tape::NodeId s);

// x_t, z_m: [frames, n_mels]; frames must be divisible by 4 (two downsamplings).
Tape::NodeId mel_score_forward(Tape& tape, ParamBinder& params, const ModelConfig& cfg,
                               const NoiseSchedule& sched, Tape::NodeId x_t,
                               Tape::NodeId z_m, Tape::NodeId s, double t);

// Convenience non-tape style embedding (deterministic in (mel, params)).
Tensor style_embed(const ParamStore& ps, const ModelConfig& cfg, const std::string& prefix,
                   const dsp::MelSpectrogram& mel);

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr0 = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double step_decay = 0.0;  // 0 means "use 0.999^(1/8)"

  double decay() const;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;
};

// Learning rate used at a given 0-based step: lr0 * decay^step.
double lr_at(const AdamConfig& cfg, std::int64_t step);

// Decoupled-weight-decay Adam update. Parameters and moments are snapped to
// the nearest f32 value after the update so the f32 checkpoint wire format
// round-trips bit-exactly.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state,
               const AdamConfig& cfg);

// Rounds every entry of every tensor to its nearest f32 value.
void snap_to_f32(ParamStore& params);

}  // namespace dhvc::nets
