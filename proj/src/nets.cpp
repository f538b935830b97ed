#include "dhvc/nets.hpp"

#include <cmath>
#include <sstream>

#include "dhvc/diffusion.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::nets {

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.pitch_denoiser_channels = 64;
  cfg.unet_channels = {64, 128, 256};
  cfg.encoder_channels = 128;
  return cfg;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["pitch_denoiser_channels"] = std::to_string(pitch_denoiser_channels);
  kv["unet_channels"] = std::to_string(unet_channels[0]) + "," +
                        std::to_string(unet_channels[1]) + "," +
                        std::to_string(unet_channels[2]);
  kv["encoder_channels"] = std::to_string(encoder_channels);
  kv["d_style"] = std::to_string(d_style);
  kv["dilation_depth"] = std::to_string(dilation_depth);
  kv["time_embed_dim"] = std::to_string(time_embed_dim);
  kv["d_content"] = std::to_string(d_content);
  kv["n_mels"] = std::to_string(n_mels);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto get_int = [&](const char* key, int& out) {
    auto it = kv.find(key);
    if (it != kv.end()) out = std::stoi(it->second);
  };
  get_int("pitch_denoiser_channels", cfg.pitch_denoiser_channels);
  get_int("encoder_channels", cfg.encoder_channels);
  get_int("d_style", cfg.d_style);
  get_int("dilation_depth", cfg.dilation_depth);
  get_int("time_embed_dim", cfg.time_embed_dim);
  get_int("d_content", cfg.d_content);
  get_int("n_mels", cfg.n_mels);
  auto it = kv.find("unet_channels");
  if (it != kv.end()) {
    std::istringstream ss(it->second);
    std::string cell;
    for (int i = 0; i < 3 && std::getline(ss, cell, ','); ++i)
      cfg.unet_channels[static_cast<std::size_t>(i)] = std::stoi(cell);
  }
  return cfg;
}

Tensor time_embedding(double t, int dim) {
  if (dim % 2 != 0) throw ShapeError("time_embedding: dim must be even");
  const int half = dim / 2;
  Tensor emb({dim});
  for (int i = 0; i < half; ++i) {
    const double freq =
        half > 1 ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
    emb[2 * i] = std::sin(1000.0 * t * freq);
    emb[2 * i + 1] = std::cos(1000.0 * t * freq);
  }
  return emb;
}

Tensor mel_stats(const dsp::MelSpectrogram& mel) {
  if (mel.n_frames < 2)
    throw InvalidInputError("mel_stats: need at least 2 frames for pooled statistics");
  Tensor stats({2 * static_cast<std::int64_t>(mel.n_mels)});
  for (int m = 0; m < mel.n_mels; ++m) {
    double mean = 0.0;
    for (std::int64_t f = 0; f < mel.n_frames; ++f) mean += mel.at(f, m);
    mean /= static_cast<double>(mel.n_frames);
    double var = 0.0;
    for (std::int64_t f = 0; f < mel.n_frames; ++f) {
      const double d = mel.at(f, m) - mean;
      var += d * d;
    }
    var /= static_cast<double>(mel.n_frames);
    stats[m] = mean;
    stats[mel.n_mels + m] = std::sqrt(var + 1e-8);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// initialization

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = stddev * rng.normal();
  return t;
}

void add_conv1d(ParamStore& ps, const std::string& name, std::int64_t cout,
                std::int64_t cin, std::int64_t k, Rng& rng, bool bias = true,
                double gain = 1.0) {
  const double sd = gain / std::sqrt(static_cast<double>(cin * k));
  ps.insert(name + ".w", random_tensor({cout, cin, k}, sd, rng));
  if (bias) ps.insert(name + ".b", Tensor({cout}));
}

void add_conv2d(ParamStore& ps, const std::string& name, std::int64_t cout,
                std::int64_t cin, Rng& rng, bool bias = true, double gain = 1.0) {
  const double sd = gain / std::sqrt(static_cast<double>(cin * 9));
  ps.insert(name + ".w", random_tensor({cout, cin, 3, 3}, sd, rng));
  if (bias) ps.insert(name + ".b", Tensor({cout}));
}

void add_affine(ParamStore& ps, const std::string& name, std::int64_t m, std::int64_t n,
                Rng& rng, bool bias = true, double gain = 1.0) {
  const double sd = gain / std::sqrt(static_cast<double>(n));
  ps.insert(name + ".w", random_tensor({m, n}, sd, rng));
  if (bias) ps.insert(name + ".b", Tensor({m}));
}

void add_group_norm(ParamStore& ps, const std::string& name, std::int64_t c) {
  ps.insert(name + ".g", Tensor({c}, 1.0));
  ps.insert(name + ".b", Tensor({c}));
}

int wavenet_blocks(const ModelConfig& cfg, int cycles) {
  return cycles * (cfg.dilation_depth + 1);
}

int block_dilation(const ModelConfig& cfg, int block) {
  return 1 << (block % (cfg.dilation_depth + 1));
}

// Gated dilated 1-D stack shared by the pitch denoiser and all 1-D encoders.
void add_wavenet(ParamStore& ps, const std::string& prefix, int channels, int in_channels,
                 int out_channels, int blocks, const ModelConfig& cfg, Rng& rng,
                 bool with_time, bool zero_out) {
  add_conv1d(ps, prefix + ".in", channels, in_channels, 1, rng);
  for (int i = 0; i < blocks; ++i) {
    const std::string b = prefix + ".blk" + std::to_string(i);
    add_conv1d(ps, b + ".dil", 2 * channels, channels, 3, rng);
    add_conv1d(ps, b + ".zc", 2 * channels, 1, 1, rng, /*bias=*/false);
    add_affine(ps, b + ".sc", 2 * channels, cfg.d_style, rng, /*bias=*/false);
    if (with_time)
      add_affine(ps, b + ".tc", 2 * channels, cfg.time_embed_dim, rng, /*bias=*/false);
    add_conv1d(ps, b + ".res", channels, channels, 1, rng);
    add_conv1d(ps, b + ".skip", channels, channels, 1, rng);
  }
  add_conv1d(ps, prefix + ".out1", channels, channels, 1, rng);
  add_conv1d(ps, prefix + ".out2", out_channels, channels, 1, rng, /*bias=*/true,
             zero_out ? 0.0 : 1.0);
  if (with_time) {
    add_affine(ps, prefix + ".t0", cfg.time_embed_dim, cfg.time_embed_dim, rng);
    add_affine(ps, prefix + ".t1", cfg.time_embed_dim, cfg.time_embed_dim, rng);
  }
}

void add_resblock(ParamStore& ps, const std::string& name, int channels,
                  const ModelConfig& cfg, Rng& rng) {
  add_conv2d(ps, name + ".c1", channels, channels, rng);
  add_group_norm(ps, name + ".n1", channels);
  add_affine(ps, name + ".tc", channels, cfg.time_embed_dim, rng, /*bias=*/false);
  add_affine(ps, name + ".sc", channels, cfg.d_style, rng, /*bias=*/false);
  add_conv2d(ps, name + ".c2", channels, channels, rng);
  add_group_norm(ps, name + ".n2", channels);
}

void add_style_embedder(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg,
                        Rng& rng) {
  const int hidden = 2 * cfg.encoder_channels;
  add_affine(ps, prefix + ".l1", hidden, 2 * cfg.n_mels, rng);
  // No bias on the output layer: a shared offset would only inflate the
  // cosine similarity between speaker embeddings.
  add_affine(ps, prefix + ".l2", cfg.d_style, hidden, rng, /*bias=*/false);
}

}  // namespace

void init_pitch_stage(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x70697463685f7374ULL));
  add_wavenet(ps, "p_den", cfg.pitch_denoiser_channels, 1, 1, wavenet_blocks(cfg, 2), cfg,
              rng, /*with_time=*/true, /*zero_out=*/true);
  add_wavenet(ps, "p_enc", cfg.encoder_channels, 1, 1, wavenet_blocks(cfg, 1), cfg, rng,
              /*with_time=*/false, /*zero_out=*/false);
  add_style_embedder(ps, "p_sty", cfg, rng);
  snap_to_f32(ps);
}

void init_voice_stage(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x766f6963655f7374ULL));
  const auto [c1, c2, c3] = cfg.unet_channels;
  add_conv2d(ps, "v_den.in_x", c1, 1, rng);
  add_conv2d(ps, "v_den.in_z", c1, 1, rng, /*bias=*/false);
  add_resblock(ps, "v_den.e1", c1, cfg, rng);
  add_conv2d(ps, "v_den.down1", c2, c1, rng);
  add_resblock(ps, "v_den.e2", c2, cfg, rng);
  add_conv2d(ps, "v_den.down2", c3, c2, rng);
  add_resblock(ps, "v_den.e3", c3, cfg, rng);
  add_conv2d(ps, "v_den.up2", c2, c3, rng);
  add_resblock(ps, "v_den.d2", c2, cfg, rng);
  add_conv2d(ps, "v_den.up1", c1, c2, rng);
  add_resblock(ps, "v_den.d1", c1, cfg, rng);
  add_group_norm(ps, "v_den.on", c1);
  add_conv2d(ps, "v_den.out", 1, c1, rng, /*bias=*/true, /*gain=*/0.0);
  add_affine(ps, "v_den.t0", cfg.time_embed_dim, cfg.time_embed_dim, rng);
  add_affine(ps, "v_den.t1", cfg.time_embed_dim, cfg.time_embed_dim, rng);

  add_wavenet(ps, "v_src", cfg.encoder_channels, 1, cfg.n_mels, wavenet_blocks(cfg, 1),
              cfg, rng, /*with_time=*/false, /*zero_out=*/false);
  add_wavenet(ps, "v_ftr", cfg.encoder_channels, cfg.d_content, cfg.n_mels,
              wavenet_blocks(cfg, 1), cfg, rng, /*with_time=*/false, /*zero_out=*/false);
  // Start the combined source+filter prediction at the log-power midpoint of
  // typical mel data; the optimizer cannot cover an offset this large within
  // a desk-scale step budget.
  for (auto& v : ps.at("v_src.out2.b").data) v = -3.0;
  for (auto& v : ps.at("v_ftr.out2.b").data) v = -3.0;
  add_style_embedder(ps, "v_sty", cfg, rng);
  snap_to_f32(ps);
}

// ---------------------------------------------------------------------------
// forwards

namespace {

Tape::NodeId time_mlp(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                      const std::string& prefix, double t) {
  Tape::NodeId emb = tape.leaf(time_embedding(t, cfg.time_embed_dim));
  Tape::NodeId h = tape.silu(tape.affine(emb, p(prefix + ".t0.w"), p(prefix + ".t0.b")));
  return tape.affine(h, p(prefix + ".t1.w"), p(prefix + ".t1.b"));
}

// Shared gated dilated stack. `cond` [1,L] is the per-sample conditioning
// signal (z prior or nothing); temb is kNone for time-free encoders.
Tape::NodeId wavenet_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                             const std::string& prefix, int channels, int blocks,
                             Tape::NodeId input, Tape::NodeId cond, Tape::NodeId s,
                             Tape::NodeId temb) {
  Tape::NodeId h = tape.conv1d(input, p(prefix + ".in.w"), p(prefix + ".in.b"));
  Tape::NodeId skip_sum = Tape::kNone;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < blocks; ++i) {
    const std::string b = prefix + ".blk" + std::to_string(i);
    Tape::NodeId pre =
        tape.conv1d(h, p(b + ".dil.w"), p(b + ".dil.b"), block_dilation(cfg, i));
    if (cond != Tape::kNone)
      pre = tape.add(pre, tape.conv1d(cond, p(b + ".zc.w"), Tape::kNone));
    pre = tape.add_channel_bias(pre, tape.affine(s, p(b + ".sc.w"), Tape::kNone));
    if (temb != Tape::kNone)
      pre = tape.add_channel_bias(pre, tape.affine(temb, p(b + ".tc.w"), Tape::kNone));
    Tape::NodeId gate = tape.gated(tape.slice_channels(pre, 0, channels),
                                   tape.slice_channels(pre, channels, 2 * channels));
    Tape::NodeId res = tape.conv1d(gate, p(b + ".res.w"), p(b + ".res.b"));
    h = tape.scale(tape.add(h, res), inv_sqrt2);
    Tape::NodeId sk = tape.conv1d(gate, p(b + ".skip.w"), p(b + ".skip.b"));
    skip_sum = (skip_sum == Tape::kNone) ? sk : tape.add(skip_sum, sk);
  }
  Tape::NodeId o = tape.silu(tape.scale(skip_sum, 1.0 / std::sqrt(double(blocks))));
  o = tape.silu(tape.conv1d(o, p(prefix + ".out1.w"), p(prefix + ".out1.b")));
  return tape.conv1d(o, p(prefix + ".out2.w"), p(prefix + ".out2.b"));
}

Tape::NodeId resblock_forward(Tape& tape, ParamBinder& p, const std::string& name,
                              Tape::NodeId x, Tape::NodeId s, Tape::NodeId temb) {
  Tape::NodeId h = tape.conv2d(x, p(name + ".c1.w"), p(name + ".c1.b"));
  h = tape.group_norm(h, p(name + ".n1.g"), p(name + ".n1.b"), 4);
  h = tape.silu(h);
  h = tape.add_channel_bias(h, tape.affine(temb, p(name + ".tc.w"), Tape::kNone));
  h = tape.add_channel_bias(h, tape.affine(s, p(name + ".sc.w"), Tape::kNone));
  h = tape.conv2d(h, p(name + ".c2.w"), p(name + ".c2.b"));
  h = tape.group_norm(h, p(name + ".n2.g"), p(name + ".n2.b"), 4);
  h = tape.silu(h);
  return tape.add(x, h);
}

}  // namespace

Tape::NodeId style_embed_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                                 const std::string& prefix, Tape::NodeId stats) {
  (void)cfg;
  // Standardize the pooled-statistics vector: mel stats share a large common
  // offset across all utterances, which would otherwise dominate the
  // embedding direction.
  const Tensor& sv = tape.val(stats);
  double mean = 0.0;
  for (double v : sv.data) mean += v;
  mean /= static_cast<double>(sv.numel());
  double var = 0.0;
  for (double v : sv.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(sv.numel());
  Tape::NodeId normed =
      tape.scale(tape.add_const(stats, -mean), 1.0 / std::sqrt(var + 1e-8));
  Tape::NodeId h =
      tape.tanh_op(tape.affine(normed, p(prefix + ".l1.w"), p(prefix + ".l1.b")));
  return tape.affine(h, p(prefix + ".l2.w"), Tape::kNone);
}

Tape::NodeId pitch_score_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                                 const NoiseSchedule& sched, Tape::NodeId x_t,
                                 Tape::NodeId z, Tape::NodeId s, double t) {
  if (!(t > 0.0 && t <= 1.0))
    throw DomainError("pitch_score_forward: t outside (0, 1]");
  require_same_shape(tape.val(x_t), tape.val(z), "pitch_score_forward");
  Tape::NodeId temb = time_mlp(tape, p, cfg, "p_den", t);
  Tape::NodeId eps = wavenet_forward(tape, p, cfg, "p_den", cfg.pitch_denoiser_channels,
                                     wavenet_blocks(cfg, 2), x_t, z, s, temb);
  const double variance = diffusion::marginal_params(sched, t).variance;
  return tape.scale(eps, -1.0 / std::sqrt(variance));
}

Tape::NodeId pitch_encoder_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                                   Tape::NodeId norm_f0, Tape::NodeId s) {
  return wavenet_forward(tape, p, cfg, "p_enc", cfg.encoder_channels,
                         wavenet_blocks(cfg, 1), norm_f0, Tape::kNone, s, Tape::kNone);
}

SourceFilterNodes source_filter_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                                        Tape::NodeId content, Tape::NodeId f0_log,
                                        Tape::NodeId s) {
  const Tensor& cv = tape.val(content);
  const Tensor& fv = tape.val(f0_log);
  if (cv.rank() != 2 || cv.dim(0) != cfg.d_content)
    throw ShapeError("source_filter_forward: content must be [d_content, frames]");
  if (fv.rank() != 2 || fv.dim(0) != 1 || fv.dim(1) != 4 * cv.dim(1))
    throw ShapeError("source_filter_forward: f0 must be [1, 4*frames], got " +
                     shape_str(fv.shape) + " for " + std::to_string(cv.dim(1)) +
                     " content frames");

  Tape::NodeId f0_frames = tape.avg_pool1d(f0_log, 4);
  Tape::NodeId z_src_cl = wavenet_forward(tape, p, cfg, "v_src", cfg.encoder_channels,
                                          wavenet_blocks(cfg, 1), f0_frames, Tape::kNone,
                                          s, Tape::kNone);
  Tape::NodeId z_ftr_cl = wavenet_forward(tape, p, cfg, "v_ftr", cfg.encoder_channels,
                                          wavenet_blocks(cfg, 1), content, Tape::kNone, s,
                                          Tape::kNone);
  SourceFilterNodes out;
  out.z_src = tape.transpose2(z_src_cl);  // [frames, n_mels]
  out.z_ftr = tape.transpose2(z_ftr_cl);
  out.z_m = tape.add(out.z_src, out.z_ftr);
  return out;
}

Tape::NodeId mel_score_forward(Tape& tape, ParamBinder& p, const ModelConfig& cfg,
                               const NoiseSchedule& sched, Tape::NodeId x_t,
                               Tape::NodeId z_m, Tape::NodeId s, double t) {
  if (!(t > 0.0 && t <= 1.0)) throw DomainError("mel_score_forward: t outside (0, 1]");
  require_same_shape(tape.val(x_t), tape.val(z_m), "mel_score_forward");
  const Tensor& xv = tape.val(x_t);
  if (xv.rank() != 2) throw ShapeError("mel_score_forward: inputs must be [frames, n_mels]");
  const std::int64_t frames = xv.dim(0), bins = xv.dim(1);
  if (frames % 4 != 0)
    throw ShapeError("mel_score_forward: frame count " + std::to_string(frames) +
                     " not divisible by 4; pad upstream");

  Tape::NodeId temb = time_mlp(tape, p, cfg, "v_den", t);
  Tape::NodeId xi = tape.reshape(x_t, {1, frames, bins});
  Tape::NodeId zi = tape.reshape(z_m, {1, frames, bins});
  Tape::NodeId h = tape.add(tape.conv2d(xi, p("v_den.in_x.w"), p("v_den.in_x.b")),
                            tape.conv2d(zi, p("v_den.in_z.w"), Tape::kNone));

  Tape::NodeId e1 = resblock_forward(tape, p, "v_den.e1", h, s, temb);
  Tape::NodeId d1 = tape.conv2d(tape.down2(e1), p("v_den.down1.w"), p("v_den.down1.b"));
  Tape::NodeId e2 = resblock_forward(tape, p, "v_den.e2", d1, s, temb);
  Tape::NodeId d2 = tape.conv2d(tape.down2(e2), p("v_den.down2.w"), p("v_den.down2.b"));
  Tape::NodeId e3 = resblock_forward(tape, p, "v_den.e3", d2, s, temb);

  Tape::NodeId u2 = tape.conv2d(tape.up2(e3), p("v_den.up2.w"), p("v_den.up2.b"));
  u2 = resblock_forward(tape, p, "v_den.d2", tape.add(u2, e2), s, temb);
  Tape::NodeId u1 = tape.conv2d(tape.up2(u2), p("v_den.up1.w"), p("v_den.up1.b"));
  u1 = resblock_forward(tape, p, "v_den.d1", tape.add(u1, e1), s, temb);

  Tape::NodeId o = tape.silu(tape.group_norm(u1, p("v_den.on.g"), p("v_den.on.b"), 4));
  o = tape.conv2d(o, p("v_den.out.w"), p("v_den.out.b"));
  const double variance = diffusion::marginal_params(sched, t).variance;
  return tape.reshape(tape.scale(o, -1.0 / std::sqrt(variance)), {frames, bins});
}

Tensor style_embed(const ParamStore& ps, const ModelConfig& cfg, const std::string& prefix,
                   const dsp::MelSpectrogram& mel) {
  Tape tape;
  ParamBinder p(tape, ps, /*trainable=*/false);
  Tape::NodeId stats = tape.leaf(mel_stats(mel));
  return tape.val(style_embed_forward(tape, p, cfg, prefix, stats));
}

// ---------------------------------------------------------------------------
// optimizer

double AdamConfig::decay() const {
  return step_decay > 0.0 ? step_decay : std::pow(0.999, 1.0 / 8.0);
}

double lr_at(const AdamConfig& cfg, std::int64_t step) {
  return cfg.lr0 * std::pow(cfg.decay(), static_cast<double>(step));
}

void snap_to_f32(ParamStore& params) {
  for (auto& [name, t] : params.tensors)
    for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state,
               const AdamConfig& cfg) {
  const double lr = lr_at(cfg, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    require_same_shape(p, g, "adam_step");
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
      p[i] = static_cast<double>(static_cast<float>(p[i]));
      m[i] = static_cast<double>(static_cast<float>(m[i]));
      v[i] = static_cast<double>(static_cast<float>(v[i]));
    }
  }
  ++state.step;
}

}  // namespace dhvc::nets
