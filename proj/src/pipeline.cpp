#include "dhvc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <thread>

#include "dhvc/checkpoint.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/io.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::pipeline {

using nets::ParamBinder;
using nets::Tape;

namespace {

constexpr std::uint64_t kPitchStageTag = 0x646966665f703031ULL;
constexpr std::uint64_t kVoiceStageTag = 0x646966665f763031ULL;

std::vector<std::size_t> training_pool(const Corpus& corpus, int val_per_speaker) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    if (!is_validation_utterance(corpus, i, val_per_speaker)) pool.push_back(i);
  if (pool.empty()) throw InvalidInputError("training pool is empty");
  return pool;
}

// Crop of `seg` mel frames (f0 at 4x), padded when the utterance is shorter.
struct Crop {
  Tensor mel;       // [seg, n_mels]
  Tensor content;   // [d_content, seg]
  Tensor f0_log;    // [1, 4*seg]
  Tensor f0_norm;   // [1, 4*seg]
};

Crop make_crop(const Utterance& utt, int seg, Rng& rng) {
  const std::int64_t frames = utt.mel.n_frames;
  const std::int64_t off =
      frames > seg ? rng.uniform_int(0, frames - seg) : 0;

  Crop crop;
  crop.mel = Tensor({seg, utt.mel.n_mels}, dsp::log_floor());
  crop.content = Tensor({utt.content.dim, seg});
  crop.f0_log = Tensor({1, 4 * static_cast<std::int64_t>(seg)});
  crop.f0_norm = Tensor({1, 4 * static_cast<std::int64_t>(seg)});

  const pitch::NormalizedContour norm = pitch::normalize_f0(utt.contour, utt.stats);
  const std::vector<double> f0_log = pitch::log1p_f0(utt.contour);

  for (std::int64_t f = 0; f < seg; ++f) {
    const std::int64_t src = off + f;
    if (src >= frames) break;
    for (int m = 0; m < utt.mel.n_mels; ++m) crop.mel.at2(f, m) = utt.mel.at(src, m);
    for (int d = 0; d < utt.content.dim; ++d)
      crop.content.at2(d, f) = utt.content.at(src, d);
    for (int q = 0; q < 4; ++q) {
      const std::int64_t fi = 4 * src + q;
      crop.f0_log[4 * f + q] = f0_log[static_cast<std::size_t>(fi)];
      crop.f0_norm[4 * f + q] = norm.values[static_cast<std::size_t>(fi)];
    }
  }
  return crop;
}

struct SampleResult {
  nets::GradMap grads;
  double total = 0.0;
  double recon = 0.0;
  double dsm = 0.0;
};

struct DsmNodes {
  Tape::NodeId loss;
  double lambda_t;
};

// Score-matching term on the tape: X_t from the closed-form marginal around
// the (tape-valued) prior z, target score -eps/sqrt(variance).
DsmNodes dsm_term(Tape& tape, const NoiseSchedule& sched, Tape::NodeId x0,
                  Tape::NodeId z, double t, const Tensor& eps,
                  const std::function<Tape::NodeId(Tape::NodeId x_t)>& score_of) {
  const auto [alpha, variance] = diffusion::marginal_params(sched, t);
  const double sd = std::sqrt(variance);
  Tape::NodeId eps_node = tape.leaf(eps);
  Tape::NodeId x_t = tape.add(tape.add(tape.scale(x0, alpha), tape.scale(z, 1.0 - alpha)),
                              tape.scale(eps_node, sd));
  Tensor target(eps.shape);
  for (std::int64_t i = 0; i < eps.numel(); ++i) target[i] = -eps[i] / sd;
  Tape::NodeId est = score_of(x_t);
  Tape::NodeId sq = tape.mean_sq_diff(est, tape.leaf(target));
  return {tape.scale(sq, variance), variance};
}

SampleResult run_pitch_sample(const TrainState& state, const TrainConfig& cfg,
                              const Corpus& corpus,
                              const std::vector<std::size_t>& pool, std::int64_t step,
                              int sample_index) {
  Rng rng(mix_seed(cfg.seed, kPitchStageTag, static_cast<std::uint64_t>(step),
                   static_cast<std::uint64_t>(sample_index)));
  const Utterance& utt = corpus.utterances[pool[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]];
  const Crop crop = make_crop(utt, cfg.seg_frames, rng);
  const double t =
      diffusion::kTrainTimeFloor + (1.0 - diffusion::kTrainTimeFloor) * (1.0 - rng.uniform());
  Tensor eps(crop.f0_log.shape);
  for (auto& v : eps.data) v = rng.normal();

  Tape tape;
  ParamBinder params(tape, state.pitch_stage.params, /*trainable=*/true);
  Tape::NodeId sty = nets::style_embed_forward(tape, params, state.model, "p_sty",
                                               tape.leaf(nets::mel_stats(utt.mel)));
  Tape::NodeId x_p = tape.leaf(crop.f0_log);
  Tape::NodeId z_p = nets::pitch_encoder_forward(tape, params, state.model,
                                                 tape.leaf(crop.f0_norm), sty);
  Tape::NodeId l1 = tape.mean_abs_diff(z_p, x_p);
  const DsmNodes dsm = dsm_term(tape, state.sched, x_p, z_p, t, eps, [&](Tape::NodeId x_t) {
    return nets::pitch_score_forward(tape, params, state.model, state.sched, x_t, z_p, sty, t);
  });
  Tape::NodeId loss = tape.add(l1, dsm.loss);
  tape.backward(loss);

  SampleResult res;
  params.collect_grads(res.grads);
  res.total = tape.val(loss)[0];
  res.recon = tape.val(l1)[0];
  res.dsm = tape.val(dsm.loss)[0];
  return res;
}

SampleResult run_voice_sample(const TrainState& state, const TrainConfig& cfg,
                              const Corpus& corpus,
                              const std::vector<std::size_t>& pool, std::int64_t step,
                              int sample_index) {
  Rng rng(mix_seed(cfg.seed, kVoiceStageTag, static_cast<std::uint64_t>(step),
                   static_cast<std::uint64_t>(sample_index)));
  const Utterance& utt = corpus.utterances[pool[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]];
  const Crop crop = make_crop(utt, cfg.seg_frames, rng);
  const double t =
      diffusion::kTrainTimeFloor + (1.0 - diffusion::kTrainTimeFloor) * (1.0 - rng.uniform());
  Tensor eps(crop.mel.shape);
  for (auto& v : eps.data) v = rng.normal();
  const std::uint64_t mask_seed = mix_seed(cfg.seed, 0x6d61736bULL,
                                           static_cast<std::uint64_t>(step),
                                           static_cast<std::uint64_t>(sample_index));

  Tape tape;
  ParamBinder params(tape, state.voice_stage.params, /*trainable=*/true);
  Tape::NodeId sty = nets::style_embed_forward(tape, params, state.model, "v_sty",
                                               tape.leaf(nets::mel_stats(utt.mel)));
  Tape::NodeId x_mel = tape.leaf(crop.mel);
  const nets::SourceFilterNodes sf = nets::source_filter_forward(
      tape, params, state.model, tape.leaf(crop.content), tape.leaf(crop.f0_log), sty);
  Tape::NodeId l_rec = tape.mean_abs_diff(sf.z_m, x_mel);

  // Reconstruction is regularized on the clean prior; the denoiser sees the
  // frequency-masked one.
  Tape::NodeId z_for_dsm = sf.z_m;
  if (cfg.mask_ratio > 0.0) {
    diffusion::DiffusionPrior probe;
    probe.z = tape.val(sf.z_m);
    const diffusion::DiffusionPrior masked =
        diffusion::apply_frequency_mask(probe, cfg.mask_ratio, mask_seed);
    z_for_dsm = tape.mask_fill(sf.z_m, masked.mask, diffusion::mel_log_floor());
  }
  const DsmNodes dsm =
      dsm_term(tape, state.sched, x_mel, z_for_dsm, t, eps, [&](Tape::NodeId x_t) {
        return nets::mel_score_forward(tape, params, state.model, state.sched, x_t, z_for_dsm, sty, t);
      });
  Tape::NodeId loss = tape.add(l_rec, dsm.loss);
  tape.backward(loss);

  SampleResult res;
  params.collect_grads(res.grads);
  res.total = tape.val(loss)[0];
  res.recon = tape.val(l_rec)[0];
  res.dsm = tape.val(dsm.loss)[0];
  return res;
}

using SampleFn = SampleResult (*)(const TrainState&, const TrainConfig&, const Corpus&,
                                  const std::vector<std::size_t>&, std::int64_t, int);

void train_stage(const Corpus& corpus, const TrainConfig& cfg, std::int64_t target_steps,
                 TrainState& state, StageState& stage, SampleFn sample_fn) {
  if (corpus.utterances.empty()) throw InvalidInputError("train: empty corpus");
  const int val = std::min(cfg.val_per_speaker,
                           std::max(0, corpus.utterances_per_speaker - 1));
  const std::vector<std::size_t> pool = training_pool(corpus, val);

  const unsigned n_workers = std::max(
      1u, std::min({std::thread::hardware_concurrency(), static_cast<unsigned>(cfg.batch), 8u}));

  while (stage.step < target_steps) {
    const std::int64_t step = stage.step;
    std::vector<SampleResult> results(static_cast<std::size_t>(cfg.batch));
    std::vector<std::exception_ptr> errors(n_workers);
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (int j = static_cast<int>(w); j < cfg.batch; j += static_cast<int>(n_workers))
            results[static_cast<std::size_t>(j)] =
                sample_fn(state, cfg, corpus, pool, step, j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (!e) continue;
      try {
        std::rethrow_exception(e);
      } catch (const NumericalError& err) {
        throw DivergenceError(std::string("training diverged: ") + err.what(), step);
      }
    }

    // Deterministic accumulation in sample order.
    nets::GradMap grads;
    LossRecord rec{step, 0.0, 0.0, 0.0};
    for (int j = 0; j < cfg.batch; ++j) {
      SampleResult& r = results[static_cast<std::size_t>(j)];
      rec.total += r.total;
      rec.recon += r.recon;
      rec.dsm += r.dsm;
      for (auto& [name, g] : r.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, std::move(g));
        } else {
          for (std::int64_t i = 0; i < it->second.numel(); ++i) it->second[i] += g[i];
        }
      }
    }
    const double inv_b = 1.0 / static_cast<double>(cfg.batch);
    rec.total *= inv_b;
    rec.recon *= inv_b;
    rec.dsm *= inv_b;
    if (!std::isfinite(rec.total))
      throw DivergenceError("training diverged: non-finite loss", step);
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v *= inv_b;

    nets::adam_step(stage.params, grads, stage.adam, cfg.adam);
    stage.step = stage.adam.step;
    stage.loss_history.push_back(rec);
  }
  stage.ready = stage.step > 0;
}

}  // namespace

bool is_validation_utterance(const Corpus& corpus, std::size_t index, int val_per_speaker) {
  if (corpus.utterances_per_speaker <= 0) return false;
  const int within = static_cast<int>(index) % corpus.utterances_per_speaker;
  return within >= corpus.utterances_per_speaker - val_per_speaker;
}

void train_diffpitch(const Corpus& corpus, const TrainConfig& cfg, std::int64_t target_steps,
                     TrainState& state) {
  state.model = cfg.model;
  state.sched = cfg.sched;
  state.seed = cfg.seed;
  if (state.pitch_stage.params.tensors.empty())
    nets::init_pitch_stage(state.pitch_stage.params, cfg.model,
                           mix_seed(cfg.seed, kPitchStageTag));
  train_stage(corpus, cfg, target_steps, state, state.pitch_stage, &run_pitch_sample);
}

void train_diffvoice(const Corpus& corpus, const TrainConfig& cfg, std::int64_t target_steps,
                     TrainState& state) {
  state.model = cfg.model;
  state.sched = cfg.sched;
  state.seed = cfg.seed;
  if (state.voice_stage.params.tensors.empty())
    nets::init_voice_stage(state.voice_stage.params, cfg.model,
                           mix_seed(cfg.seed, kVoiceStageTag));
  train_stage(corpus, cfg, target_steps, state, state.voice_stage, &run_voice_sample);
}

// ---------------------------------------------------------------------------
// inference

namespace {

Tensor row_vector(const std::vector<double>& v) {
  Tensor t({1, static_cast<std::int64_t>(v.size())});
  t.data = v;
  return t;
}

// Tape-free forward of the pitch encoder.
Tensor pitch_prior_value(const TrainState& state, const Tensor& f0_norm,
                         const Tensor& style) {
  Tape tape;
  ParamBinder params(tape, state.pitch_stage.params, /*trainable=*/false);
  Tape::NodeId z = nets::pitch_encoder_forward(tape, params, state.model,
                                               tape.leaf(f0_norm), tape.leaf(style));
  return tape.val(z);
}

Tensor source_filter_value(const TrainState& state, const Tensor& content,
                           const Tensor& f0_log, const Tensor& style,
                           Tensor* z_src = nullptr, Tensor* z_ftr = nullptr) {
  Tape tape;
  ParamBinder params(tape, state.voice_stage.params, /*trainable=*/false);
  const nets::SourceFilterNodes sf =
      nets::source_filter_forward(tape, params, state.model, tape.leaf(content),
                                  tape.leaf(f0_log), tape.leaf(style));
  if (z_src) *z_src = tape.val(sf.z_src);
  if (z_ftr) *z_ftr = tape.val(sf.z_ftr);
  return tape.val(sf.z_m);
}

diffusion::ScoreFn pitch_score_fn(const TrainState& state, const Tensor& style) {
  return [&state, style](const Tensor& x_t, const Tensor& z, double t) {
    Tape tape;
    ParamBinder params(tape, state.pitch_stage.params, /*trainable=*/false);
    return tape.val(nets::pitch_score_forward(tape, params, state.model, state.sched, tape.leaf(x_t),
                                              tape.leaf(z), tape.leaf(style), t));
  };
}

diffusion::ScoreFn mel_score_fn(const TrainState& state, const Tensor& style) {
  return [&state, style](const Tensor& x_t, const Tensor& z, double t) {
    Tape tape;
    ParamBinder params(tape, state.voice_stage.params, /*trainable=*/false);
    return tape.val(nets::mel_score_forward(tape, params, state.model, state.sched, tape.leaf(x_t),
                                            tape.leaf(z), tape.leaf(style), t));
  };
}

Tensor pad_mel_rows(const Tensor& mel, std::int64_t target_rows) {
  Tensor out({target_rows, mel.dim(1)}, dsp::log_floor());
  for (std::int64_t f = 0; f < mel.dim(0); ++f)
    for (std::int64_t m = 0; m < mel.dim(1); ++m) out.at2(f, m) = mel.at2(f, m);
  return out;
}

Tensor content_transposed(const dsp::ContentFeatures& content) {
  Tensor t({content.dim, content.n_frames});
  for (std::int64_t f = 0; f < content.n_frames; ++f)
    for (int d = 0; d < content.dim; ++d) t.at2(d, f) = content.at(f, d);
  return t;
}

void require_trained(const TrainState& state, bool need_pitch, bool need_voice) {
  if (need_pitch && !state.pitch_stage.ready)
    throw UninitializedModelError("pitch stage has not been trained or loaded");
  if (need_voice && !state.voice_stage.ready)
    throw UninitializedModelError("voice stage has not been trained or loaded");
}

pitch::PitchContour contour_from_log_samples(const Tensor& samples,
                                             const pitch::PitchContour& voicing_src) {
  pitch::PitchContour out;
  const std::int64_t n = samples.numel();
  out.f0_hz.assign(static_cast<std::size_t>(n), 0.0);
  out.voiced.assign(static_cast<std::size_t>(n), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (!voicing_src.voiced[static_cast<std::size_t>(i)]) continue;
    const double hz = std::expm1(samples[i]);
    out.f0_hz[static_cast<std::size_t>(i)] = std::clamp(hz, 60.0, 400.0);
    out.voiced[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

double voiced_mean(const pitch::PitchContour& c) {
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < c.size(); ++i)
    if (c.voiced[static_cast<std::size_t>(i)]) {
      acc += c.f0_hz[static_cast<std::size_t>(i)];
      ++n;
    }
  return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

double rmse_on_voiced(const pitch::PitchContour& a, const pitch::PitchContour& ref) {
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < std::min(a.size(), ref.size()); ++i) {
    if (!ref.voiced[static_cast<std::size_t>(i)]) continue;
    const double d = a.f0_hz[static_cast<std::size_t>(i)] - ref.f0_hz[static_cast<std::size_t>(i)];
    acc += d * d;
    ++n;
  }
  return n > 0 ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

}  // namespace

ConvertResult convert(const Utterance& source, const Utterance& target,
                      const TrainState& state, const diffusion::SamplerConfig& cfg) {
  require_trained(state, true, true);
  if (target.mel.n_frames < 2)
    throw InvalidInputError("convert: target needs at least 2 mel frames");

  const pitch::PitchStats src_stats = pitch::compute_stats(source.contour);
  const pitch::NormalizedContour norm = pitch::normalize_f0(source.contour, src_stats);

  const Tensor s_pitch = nets::style_embed(state.pitch_stage.params, state.model, "p_sty",
                                           target.mel);
  const Tensor s_voice = nets::style_embed(state.voice_stage.params, state.model, "v_sty",
                                           target.mel);

  // Stage 1: DiffPitch in log(F0+1) around the encoder prior.
  const Tensor z_p = pitch_prior_value(state, row_vector(norm.values), s_pitch);
  diffusion::DiffusionPrior pitch_prior;
  pitch_prior.z = z_p;
  diffusion::SamplerConfig pitch_cfg = cfg;
  pitch_cfg.seed = mix_seed(cfg.seed, 0xf0f0ULL);
  ConvertResult result;
  const Tensor f0_log_hat =
      diffusion::reverse_sample(pitch_score_fn(state, s_pitch), pitch_prior, state.sched,
                                pitch_cfg, z_p.shape, &result.pitch_trace);
  result.f0 = contour_from_log_samples(f0_log_hat, source.contour);

  // Stage 2: DiffVoice around the source-filter prior built on the converted F0.
  const Tensor content = content_transposed(source.content);
  const Tensor f0_for_enc = row_vector(pitch::log1p_f0(result.f0));
  const Tensor z_m = source_filter_value(state, content, f0_for_enc, s_voice);

  const std::int64_t frames = z_m.dim(0);
  const std::int64_t padded = ((frames + 3) / 4) * 4;
  diffusion::DiffusionPrior mel_prior;
  mel_prior.z = pad_mel_rows(z_m, padded);
  diffusion::SamplerConfig mel_cfg = cfg;
  mel_cfg.seed = mix_seed(cfg.seed, 0x3e13ULL);
  const Tensor mel_hat =
      diffusion::reverse_sample(mel_score_fn(state, s_voice), mel_prior, state.sched,
                                mel_cfg, mel_prior.z.shape, &result.mel_trace);

  Tensor mel_cropped({frames, z_m.dim(1)});
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t m = 0; m < z_m.dim(1); ++m) mel_cropped.at2(f, m) = mel_hat.at2(f, m);
  result.mel = dsp::mel_from_tensor(mel_cropped);
  return result;
}

F0CompareReport f0_baseline_compare(const Utterance& source, const Utterance& target,
                                    const TrainState& state,
                                    const diffusion::SamplerConfig& cfg) {
  require_trained(state, true, false);
  const pitch::PitchStats src_stats = pitch::compute_stats(source.contour);
  const pitch::PitchStats tgt_stats = pitch::compute_stats(target.contour);
  const pitch::NormalizedContour norm = pitch::normalize_f0(source.contour, src_stats);

  F0CompareReport report;
  report.target_mean_hz = tgt_stats.mean_hz;

  report.denorm.name = "denorm";
  report.denorm.contour = pitch::denormalize_f0(norm, tgt_stats);

  const Tensor s_pitch = nets::style_embed(state.pitch_stage.params, state.model, "p_sty",
                                           target.mel);
  const Tensor z_p = pitch_prior_value(state, row_vector(norm.values), s_pitch);
  report.encoder_only.name = "encoder_only";
  report.encoder_only.contour = contour_from_log_samples(z_p, source.contour);

  diffusion::DiffusionPrior prior;
  prior.z = z_p;
  diffusion::SamplerConfig pitch_cfg = cfg;
  pitch_cfg.seed = mix_seed(cfg.seed, 0xf0f0ULL);
  const Tensor sampled = diffusion::reverse_sample(pitch_score_fn(state, s_pitch), prior,
                                                   state.sched, pitch_cfg, z_p.shape);
  report.diffpitch.name = "diffpitch";
  report.diffpitch.contour = contour_from_log_samples(sampled, source.contour);

  for (F0Method* m : {&report.denorm, &report.encoder_only, &report.diffpitch}) {
    m->mean_voiced_hz = voiced_mean(m->contour);
    m->rmse_vs_source_hz = rmse_on_voiced(m->contour, source.contour);
  }
  return report;
}

void write_f0_compare_csv(const std::filesystem::path& path, const F0CompareReport& report) {
  std::vector<std::vector<double>> rows;
  const std::int64_t n = report.denorm.contour.size();
  rows.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    rows.push_back({static_cast<double>(i),
                    static_cast<double>(report.denorm.contour.voiced[static_cast<std::size_t>(i)]),
                    report.denorm.contour.f0_hz[static_cast<std::size_t>(i)],
                    report.encoder_only.contour.f0_hz[static_cast<std::size_t>(i)],
                    report.diffpitch.contour.f0_hz[static_cast<std::size_t>(i)]});
  }
  io::write_table_csv(path, {"frame", "voiced", "f0_denorm", "f0_encoder", "f0_diffpitch"},
                      rows);
}

// ---------------------------------------------------------------------------
// persistence

void save_stage(const std::filesystem::path& path, const StageState& stage,
                const nets::ModelConfig& model, const NoiseSchedule& sched,
                std::uint64_t seed) {
  nets::Checkpoint ckpt;
  for (const auto& [name, t] : stage.params.tensors) ckpt.tensors.emplace(name, t);
  for (const auto& [name, t] : stage.adam.m) ckpt.tensors.emplace("adam.m." + name, t);
  for (const auto& [name, t] : stage.adam.v) ckpt.tensors.emplace("adam.v." + name, t);
  ckpt.config = model.to_kv();
  ckpt.config["beta0"] = std::to_string(sched.beta0);
  ckpt.config["beta1"] = std::to_string(sched.beta1);
  ckpt.config["step"] = std::to_string(stage.step);
  ckpt.config["seed"] = std::to_string(seed);
  nets::save_checkpoint(path, ckpt);
}

void load_stage(const std::filesystem::path& path, StageState& stage,
                nets::ModelConfig& model, NoiseSchedule& sched, std::uint64_t& seed) {
  const nets::Checkpoint ckpt = nets::load_checkpoint(path);
  stage = StageState{};
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("adam.m.", 0) == 0)
      stage.adam.m.emplace(name.substr(7), t);
    else if (name.rfind("adam.v.", 0) == 0)
      stage.adam.v.emplace(name.substr(7), t);
    else
      stage.params.tensors.emplace(name, t);
  }
  model = nets::ModelConfig::from_kv(ckpt.config);
  if (auto it = ckpt.config.find("beta0"); it != ckpt.config.end())
    sched.beta0 = std::stod(it->second);
  if (auto it = ckpt.config.find("beta1"); it != ckpt.config.end())
    sched.beta1 = std::stod(it->second);
  if (auto it = ckpt.config.find("step"); it != ckpt.config.end())
    stage.step = std::stoll(it->second);
  if (auto it = ckpt.config.find("seed"); it != ckpt.config.end())
    seed = std::stoull(it->second);
  stage.adam.step = stage.step;
  stage.ready = stage.step > 0;
}

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossRecord>& history) {
  std::vector<std::vector<double>> rows;
  rows.reserve(history.size());
  for (const auto& r : history)
    rows.push_back({static_cast<double>(r.step), r.total, r.recon, r.dsm});
  io::write_table_csv(path, {"step", "total", "recon", "dsm"}, rows);
}

// ---------------------------------------------------------------------------
// evaluation

double eval_pitch_encoder_l1(const Corpus& corpus, const TrainState& state,
                             int val_per_speaker, bool validation) {
  require_trained(state, true, false);
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (is_validation_utterance(corpus, i, val_per_speaker) != validation) continue;
    const Utterance& utt = corpus.utterances[i];
    const pitch::NormalizedContour norm = pitch::normalize_f0(utt.contour, utt.stats);
    const Tensor s = nets::style_embed(state.pitch_stage.params, state.model, "p_sty",
                                       utt.mel);
    const Tensor z_p = pitch_prior_value(state, row_vector(norm.values), s);
    const std::vector<double> x_p = pitch::log1p_f0(utt.contour);
    double l1 = 0.0;
    for (std::int64_t k = 0; k < z_p.numel(); ++k)
      l1 += std::abs(z_p[k] - x_p[static_cast<std::size_t>(k)]);
    acc += l1 / static_cast<double>(z_p.numel());
    ++n;
  }
  return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

double eval_source_filter_l1(const Corpus& corpus, const TrainState& state,
                             int val_per_speaker, bool validation) {
  require_trained(state, false, true);
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (is_validation_utterance(corpus, i, val_per_speaker) != validation) continue;
    const Utterance& utt = corpus.utterances[i];
    const Tensor s = nets::style_embed(state.voice_stage.params, state.model, "v_sty",
                                       utt.mel);
    const Tensor z_m = source_filter_value(state, content_transposed(utt.content),
                                           row_vector(pitch::log1p_f0(utt.contour)), s);
    const Tensor x_mel = dsp::mel_to_tensor(utt.mel);
    double l1 = 0.0;
    for (std::int64_t k = 0; k < z_m.numel(); ++k) l1 += std::abs(z_m[k] - x_mel[k]);
    acc += l1 / static_cast<double>(z_m.numel());
    ++n;
  }
  return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

MaskedReconReport masked_recon_eval(const Utterance& utt, const TrainState& state,
                                    double ratio, const diffusion::SamplerConfig& cfg) {
  require_trained(state, false, true);
  const Tensor s = nets::style_embed(state.voice_stage.params, state.model, "v_sty",
                                     utt.mel);
  const Tensor z_m = source_filter_value(state, content_transposed(utt.content),
                                         row_vector(pitch::log1p_f0(utt.contour)), s);
  const std::int64_t frames = z_m.dim(0);
  const std::int64_t padded = ((frames + 3) / 4) * 4;

  diffusion::DiffusionPrior clean;
  clean.z = pad_mel_rows(z_m, padded);
  const diffusion::DiffusionPrior masked =
      diffusion::apply_frequency_mask(clean, ratio, mix_seed(cfg.seed, 0xabcdULL));

  const Tensor sampled = diffusion::reverse_sample(mel_score_fn(state, s), masked,
                                                   state.sched, cfg, masked.z.shape);
  const Tensor x_mel = dsp::mel_to_tensor(utt.mel);

  MaskedReconReport report;
  for (std::int64_t f = 0; f < frames; ++f) {
    for (std::int64_t m = 0; m < z_m.dim(1); ++m) {
      const std::size_t mi = static_cast<std::size_t>(f * z_m.dim(1) + m);
      if (!masked.mask[static_cast<std::size_t>(f * masked.z.dim(1) + m)]) continue;
      report.model_l1 += std::abs(sampled.at2(f, m) - x_mel.at2(f, m));
      report.prior_l1 += std::abs(clean.z.at2(f, m) - x_mel.at2(f, m));
      (void)mi;
      ++report.masked_cells;
    }
  }
  if (report.masked_cells > 0) {
    report.model_l1 /= static_cast<double>(report.masked_cells);
    report.prior_l1 /= static_cast<double>(report.masked_cells);
  }
  return report;
}

std::vector<SweepRow> masking_ratio_sweep(const Corpus& corpus, TrainConfig cfg,
                                          std::int64_t steps,
                                          const std::vector<double>& ratios) {
  std::vector<SweepRow> rows;
  for (const double ratio : ratios) {
    cfg.mask_ratio = ratio;
    TrainState state;
    train_diffvoice(corpus, cfg, steps, state);

    SweepRow row{};
    row.ratio = ratio;
    const auto& hist = state.voice_stage.loss_history;
    const std::size_t tail = std::min<std::size_t>(50, hist.size());
    for (std::size_t i = hist.size() - tail; i < hist.size(); ++i)
      row.final_loss += hist[i].total;
    if (tail > 0) row.final_loss /= static_cast<double>(tail);
    row.val_recon_l1 = eval_source_filter_l1(corpus, state, cfg.val_per_speaker, true);

    diffusion::SamplerConfig sample_cfg;
    sample_cfg.n_steps = 6;
    sample_cfg.seed = mix_seed(cfg.seed, 0x5357ULL);
    int evaluated = 0;
    for (std::size_t i = 0; i < corpus.utterances.size() && evaluated < 3; ++i) {
      if (!is_validation_utterance(corpus, i, cfg.val_per_speaker)) continue;
      const MaskedReconReport r =
          masked_recon_eval(corpus.utterances[i], state, 0.3, sample_cfg);
      row.masked_model_l1 += r.model_l1;
      row.masked_prior_l1 += r.prior_l1;
      ++evaluated;
    }
    if (evaluated > 0) {
      row.masked_model_l1 /= evaluated;
      row.masked_prior_l1 /= evaluated;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::vector<std::vector<double>> table;
  table.reserve(rows.size());
  for (const auto& r : rows)
    table.push_back({r.ratio, r.final_loss, r.val_recon_l1, r.masked_model_l1,
                     r.masked_prior_l1});
  io::write_table_csv(path,
                      {"ratio", "final_loss", "val_recon_l1", "masked_model_l1",
                       "masked_prior_l1"},
                      table);
}

}  // namespace dhvc::pipeline
