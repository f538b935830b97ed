#include "dhvc/verify.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "dhvc/diffusion.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/io.hpp"
#include "dhvc/nets.hpp"
#include "dhvc/oracle.hpp"
#include "dhvc/rng.hpp"

namespace dhvc::verify {

namespace {

void check_le(std::vector<CheckRecord>& out, const std::string& suite,
              const std::string& name, double value, double threshold) {
  out.push_back({suite, name, value, threshold, value <= threshold});
}

// ---------------------------------------------------------------------------
// marginal suite: Eq. 4 closed forms and forward-sampling moments.

void suite_marginal(std::vector<CheckRecord>& out) {
  const NoiseSchedule sched;

  check_le(out, "marginal", "int_beta(0)", std::abs(diffusion::int_beta(sched, 0.0)), 1e-12);
  check_le(out, "marginal", "int_beta(0.5)",
           std::abs(diffusion::int_beta(sched, 0.5) - 2.51875), 1e-12);
  check_le(out, "marginal", "int_beta(1)",
           std::abs(diffusion::int_beta(sched, 1.0) - 10.025), 1e-12);

  const auto m0 = diffusion::marginal_params(sched, 0.0);
  check_le(out, "marginal", "alpha(0)", std::abs(m0.alpha - 1.0), 1e-12);
  check_le(out, "marginal", "variance(0)", std::abs(m0.variance), 1e-12);
  const auto m5 = diffusion::marginal_params(sched, 0.5);
  check_le(out, "marginal", "alpha(0.5)", std::abs(m5.alpha - 0.28383), 1e-5);
  check_le(out, "marginal", "variance(0.5)", std::abs(m5.variance - 0.91944), 1e-5);
  const auto m1 = diffusion::marginal_params(sched, 1.0);
  check_le(out, "marginal", "alpha(1)", std::abs(m1.alpha - 0.006654), 1e-5);
  check_le(out, "marginal", "variance(1)", std::abs(m1.variance - 0.999956), 1e-5);

  double max_gap = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const double t = i / 20.0;
    max_gap = std::max(max_gap, std::abs(diffusion::loss_weight(sched, t) -
                                         diffusion::marginal_params(sched, t).variance));
  }
  check_le(out, "marginal", "lambda==variance", max_gap, 1e-15);

  // Monte-Carlo moments of the scalar forward marginal around x0=2, z=-1.
  const Tensor x0 = Tensor::scalar(2.0);
  diffusion::DiffusionPrior prior;
  prior.z = Tensor::scalar(-1.0);
  const std::int64_t n = 100000;
  for (const double t : {0.1, 0.5, 0.9}) {
    const auto mp = diffusion::marginal_params(sched, t);
    const double want_mean = mp.alpha * 2.0 + (1.0 - mp.alpha) * (-1.0);
    const double want_sd = std::sqrt(mp.variance);
    std::int64_t k = 0;
    const auto mom = oracle::mc_moments(
        [&] {
          return diffusion::sample_forward(x0, prior, sched, t,
                                           mix_seed(0x4d43ULL, static_cast<std::uint64_t>(
                                                                   t * 1000),
                                                    static_cast<std::uint64_t>(k++)))[0];
        },
        n);
    char name[64];
    std::snprintf(name, sizeof(name), "forward_mean(t=%.1f)", t);
    check_le(out, "marginal", name, std::abs(mom.mean - want_mean), 3.0 * mom.se_mean);
    std::snprintf(name, sizeof(name), "forward_std(t=%.1f)", t);
    check_le(out, "marginal", name, std::abs(mom.stddev - want_sd), 3.0 * mom.se_stddev);
  }

  // t = 0 returns x0 exactly; equal seeds reproduce bit-identically.
  const Tensor at0 = diffusion::sample_forward(x0, prior, sched, 0.0, 7);
  check_le(out, "marginal", "forward_t0_identity", std::abs(at0[0] - 2.0), 0.0);
  const Tensor a = diffusion::sample_forward(x0, prior, sched, 0.5, 1234);
  const Tensor b = diffusion::sample_forward(x0, prior, sched, 0.5, 1234);
  check_le(out, "marginal", "forward_determinism", std::abs(a[0] - b[0]), 0.0);
}

// ---------------------------------------------------------------------------
// score suite: Eq. 5 against central differences, plus Eq. 6 consistency.

void suite_score(std::vector<CheckRecord>& out) {
  const NoiseSchedule sched;
  Rng rng(0x53434f52ULL);

  double max_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double x0 = rng.uniform(-3.0, 3.0);
    const double z = rng.uniform(-3.0, 3.0);
    const double t = rng.uniform(0.05, 1.0);
    const double x_t = rng.uniform(-4.0, 4.0);
    const auto mp = diffusion::marginal_params(sched, t);
    const double mean = mp.alpha * x0 + (1.0 - mp.alpha) * z;
    const auto logp = [&](const std::vector<double>& p) {
      return -(p[0] - mean) * (p[0] - mean) / (2.0 * mp.variance) -
             0.5 * std::log(2.0 * std::numbers::pi * mp.variance);
    };
    const double fd = oracle::finite_diff_check(logp, {x_t})[0];
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(z);
    const Tensor score = diffusion::analytic_conditional_score(
        Tensor::scalar(x_t), Tensor::scalar(x0), prior, sched, t);
    max_err = std::max(max_err, std::abs(score[0] - fd));
  }
  check_le(out, "score", "analytic_vs_central_diff(100pts)", max_err, 1e-4);

  {
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(0.0);
    const Tensor s = diffusion::analytic_conditional_score(
        Tensor::scalar(1.0), Tensor::scalar(1.0), prior, sched, 0.5);
    check_le(out, "score", "frozen_example", std::abs(s[0] - (-0.77892)), 1e-5);
  }

  // Oracle toy: variance preservation and the degenerate sigma0=0 case.
  double max_var_gap = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const double t = i / 20.0;
    const oracle::GaussianToy toy{0.0, 1.0, 0.3};
    const auto m = oracle::gaussian_marginal(toy, sched, t);
    const auto mp = diffusion::marginal_params(sched, t);
    max_var_gap = std::max(max_var_gap,
                           std::abs(m.variance - (mp.alpha * mp.alpha + mp.variance)));
  }
  check_le(out, "score", "toy_unit_variance_identity", max_var_gap, 1e-12);
  {
    const oracle::GaussianToy toy{0.0, 1.0, 0.0};
    const auto m = oracle::gaussian_marginal(toy, sched, 0.5);
    check_le(out, "score", "toy_variance_is_one", std::abs(m.variance - 1.0), 1e-12);
    check_le(out, "score", "toy_score_at_1",
             std::abs(oracle::gaussian_marginal_score(toy, sched, 0.5, 1.0) - (-1.0)),
             1e-12);
  }
  {
    double gap = 0.0;
    for (int i = 0; i < 20; ++i) {
      const double mu = rng.uniform(-2.0, 2.0);
      const double z = rng.uniform(-2.0, 2.0);
      const double t = rng.uniform(0.05, 1.0);
      const double x_t = rng.uniform(-3.0, 3.0);
      const oracle::GaussianToy toy{mu, 0.0, z};
      diffusion::DiffusionPrior prior;
      prior.z = Tensor::scalar(z);
      const Tensor s = diffusion::analytic_conditional_score(
          Tensor::scalar(x_t), Tensor::scalar(mu), prior, sched, t);
      gap = std::max(gap, std::abs(oracle::gaussian_marginal_score(toy, sched, t, x_t) -
                                   s[0]));
    }
    check_le(out, "score", "toy_sigma0_degenerate", gap, 1e-9);
  }

  // DSM: the analytic score is the exact minimizer.
  {
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(0.4);
    const Tensor x0 = Tensor::scalar(-1.2);
    std::vector<diffusion::TimeSeed> batch;
    Rng trng(0x44534dULL);
    for (int i = 0; i < 200; ++i)
      batch.push_back({diffusion::kTrainTimeFloor +
                           (1.0 - diffusion::kTrainTimeFloor) * (1.0 - trng.uniform()),
                       mix_seed(11, static_cast<std::uint64_t>(i))});
    const auto oracle_fn = [&](const Tensor& x_t, const Tensor&, double t) {
      return diffusion::analytic_conditional_score(x_t, x0, prior, sched, t);
    };
    const auto res = diffusion::dsm_loss(oracle_fn, x0, prior, sched, batch);
    check_le(out, "score", "dsm_oracle_minimizer", res.loss, 1e-10);
  }

  // DSM with the zero estimator on the x0 = z toy: expectation is exactly 1.
  {
    const double v = 0.7;
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(v);
    const Tensor x0 = Tensor::scalar(v);
    std::vector<diffusion::TimeSeed> batch;
    Rng trng(0x5a45524fULL);
    for (int i = 0; i < 10000; ++i)
      batch.push_back({diffusion::kTrainTimeFloor +
                           (1.0 - diffusion::kTrainTimeFloor) * (1.0 - trng.uniform()),
                       mix_seed(12, static_cast<std::uint64_t>(i))});
    const auto zero_fn = [&](const Tensor& x_t, const Tensor&, double) {
      return Tensor(x_t.shape);
    };
    const auto res = diffusion::dsm_loss(zero_fn, x0, prior, sched, batch);
    check_le(out, "score", "dsm_zero_estimator", std::abs(res.loss - 1.0), 0.05);
  }
}

// ---------------------------------------------------------------------------
// sampler suite: reverse SDE recovers known laws; the sign-flip mutation
// must push these checks far outside their bounds.

void suite_sampler(std::vector<CheckRecord>& out, Mutation mutation) {
  const NoiseSchedule sched;
  const double drift_sign = mutation == Mutation::flip_drift_sign ? -1.0 : 1.0;

  // Point mass at 3 with the conditional-score oracle.
  {
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(0.0);
    const Tensor x0 = Tensor::scalar(3.0);
    const auto score = [&](const Tensor& x_t, const Tensor&, double t) {
      return diffusion::analytic_conditional_score(x_t, x0, prior, sched, t);
    };
    double acc = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
      diffusion::SamplerConfig cfg;
      cfg.n_steps = 100;
      cfg.seed = mix_seed(0x504d41ULL, static_cast<std::uint64_t>(i));
      const Tensor x = diffusion::reverse_sample_mutated(score, prior, sched, cfg, {1},
                                                         drift_sign);
      acc += std::abs(x[0] - 3.0);
    }
    check_le(out, "sampler", "point_mass_mean_abs_err", acc / n, 0.1);
  }

  // Unit Gaussian data law via the unconditional oracle score.
  {
    const oracle::GaussianToy toy{0.0, 1.0, 0.0};
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(0.0);
    const auto score = [&](const Tensor& x_t, const Tensor&, double t) {
      Tensor s(x_t.shape);
      s[0] = oracle::gaussian_marginal_score(toy, sched, t, x_t[0]);
      return s;
    };
    std::int64_t k = 0;
    const auto mom = oracle::mc_moments(
        [&] {
          diffusion::SamplerConfig cfg;
          cfg.n_steps = 100;
          cfg.seed = mix_seed(0x474155ULL, static_cast<std::uint64_t>(k++));
          return diffusion::reverse_sample_mutated(score, prior, sched, cfg, {1},
                                                   drift_sign)[0];
        },
        10000);
    check_le(out, "sampler", "gaussian_terminal_mean", std::abs(mom.mean), 0.05);
    check_le(out, "sampler", "gaussian_terminal_std", std::abs(mom.stddev - 1.0), 0.05);
  }

  // Determinism of the sampler for a fixed seed.
  {
    diffusion::DiffusionPrior prior;
    prior.z = Tensor::scalar(0.0);
    const Tensor x0 = Tensor::scalar(1.0);
    const auto score = [&](const Tensor& x_t, const Tensor&, double t) {
      return diffusion::analytic_conditional_score(x_t, x0, prior, sched, t);
    };
    diffusion::SamplerConfig cfg;
    cfg.n_steps = 30;
    cfg.seed = 99;
    const Tensor a = diffusion::reverse_sample_mutated(score, prior, sched, cfg, {1},
                                                       drift_sign);
    const Tensor b = diffusion::reverse_sample_mutated(score, prior, sched, cfg, {1},
                                                       drift_sign);
    check_le(out, "sampler", "sampler_determinism", std::abs(a[0] - b[0]), 0.0);
  }
}

// ---------------------------------------------------------------------------
// gradcheck suite: analytic parameter gradients of every network type against
// central differences on tiny configs.

nets::ModelConfig tiny_config() {
  nets::ModelConfig cfg;
  cfg.pitch_denoiser_channels = 4;
  cfg.unet_channels = {4, 8, 12};
  cfg.encoder_channels = 4;
  cfg.d_style = 4;
  cfg.dilation_depth = 1;
  cfg.time_embed_dim = 8;
  cfg.d_content = 5;
  return cfg;
}

void randomize_params(nets::ParamStore& ps, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : ps.tensors) {
    const bool is_gn_gamma = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    for (auto& v : t.data) v = (is_gn_gamma ? 1.0 : 0.0) + 0.2 * rng.normal();
  }
}

// Max relative error between analytic and central-difference gradients over
// every parameter coordinate.
double gradcheck(const nets::ParamStore& params,
                 const std::function<double(const nets::ParamStore&, nets::GradMap*)>& loss) {
  nets::GradMap analytic;
  loss(params, &analytic);

  nets::ParamStore work;
  work.tensors = params.tensors;
  const double h = 1e-3;
  double max_rel = 0.0;
  for (auto& [name, t] : work.tensors) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double fp = loss(work, nullptr);
      t[i] = saved - h;
      const double fm = loss(work, nullptr);
      t[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic.count(name) ? analytic.at(name)[i] : 0.0;
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-5});
      max_rel = std::max(max_rel, std::abs(an - fd) / denom);
    }
  }
  return max_rel;
}

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

void suite_gradcheck(std::vector<CheckRecord>& out) {
  const nets::ModelConfig cfg = tiny_config();
  const double t_diff = 0.37;

  // Pitch score net.
  {
    nets::ParamStore ps;
    nets::init_pitch_stage(ps, cfg, 1);
    randomize_params(ps, 21);
    const Tensor x_t = random_tensor({1, 12}, 31, 0.8);
    const Tensor z = random_tensor({1, 12}, 32, 0.8);
    const Tensor sty = random_tensor({cfg.d_style}, 33, 0.8);
    const Tensor w = random_tensor({1, 12}, 34, 1.0);
    auto loss = [&](const nets::ParamStore& p, nets::GradMap* grads) {
      nets::Tape tape;
      nets::ParamBinder binder(tape, p, grads != nullptr);
      const auto node =
          nets::pitch_score_forward(tape, binder, cfg, NoiseSchedule{}, tape.leaf(x_t), tape.leaf(z),
                                    tape.leaf(sty), t_diff);
      const auto l = tape.dot_const(node, w);
      if (grads) {
        tape.backward(l);
        binder.collect_grads(*grads);
      }
      return tape.val(l)[0];
    };
    // Only the denoiser parameters participate in this forward.
    nets::ParamStore denoiser_only;
    for (const auto& [name, t] : ps.tensors)
      if (name.rfind("p_den.", 0) == 0) denoiser_only.tensors.emplace(name, t);
    check_le(out, "gradcheck", "pitch_score_net", gradcheck(denoiser_only, loss), 1e-3);
  }

  // Pitch encoder.
  {
    nets::ParamStore ps;
    nets::init_pitch_stage(ps, cfg, 2);
    randomize_params(ps, 22);
    const Tensor norm = random_tensor({1, 16}, 41, 0.8);
    const Tensor sty = random_tensor({cfg.d_style}, 42, 0.8);
    const Tensor w = random_tensor({1, 16}, 43, 1.0);
    auto loss = [&](const nets::ParamStore& p, nets::GradMap* grads) {
      nets::Tape tape;
      nets::ParamBinder binder(tape, p, grads != nullptr);
      const auto node = nets::pitch_encoder_forward(tape, binder, cfg, tape.leaf(norm),
                                                    tape.leaf(sty));
      const auto l = tape.dot_const(node, w);
      if (grads) {
        tape.backward(l);
        binder.collect_grads(*grads);
      }
      return tape.val(l)[0];
    };
    nets::ParamStore enc_only;
    for (const auto& [name, t] : ps.tensors)
      if (name.rfind("p_enc.", 0) == 0) enc_only.tensors.emplace(name, t);
    check_le(out, "gradcheck", "pitch_encoder", gradcheck(enc_only, loss), 1e-3);
  }

  // Mel score net on the 8x80 toy.
  {
    nets::ParamStore ps;
    nets::init_voice_stage(ps, cfg, 3);
    randomize_params(ps, 23);
    const Tensor x_t = random_tensor({8, 80}, 51, 0.8);
    const Tensor z = random_tensor({8, 80}, 52, 0.8);
    const Tensor sty = random_tensor({cfg.d_style}, 53, 0.8);
    const Tensor w = random_tensor({8, 80}, 54, 1.0);
    auto loss = [&](const nets::ParamStore& p, nets::GradMap* grads) {
      nets::Tape tape;
      nets::ParamBinder binder(tape, p, grads != nullptr);
      const auto node = nets::mel_score_forward(tape, binder, cfg, NoiseSchedule{}, tape.leaf(x_t),
                                                tape.leaf(z), tape.leaf(sty), t_diff);
      const auto l = tape.dot_const(node, w);
      if (grads) {
        tape.backward(l);
        binder.collect_grads(*grads);
      }
      return tape.val(l)[0];
    };
    nets::ParamStore den_only;
    for (const auto& [name, t] : ps.tensors)
      if (name.rfind("v_den.", 0) == 0) den_only.tensors.emplace(name, t);
    check_le(out, "gradcheck", "mel_score_net", gradcheck(den_only, loss), 1e-3);
  }

  // Source-filter encoders.
  {
    nets::ParamStore ps;
    nets::init_voice_stage(ps, cfg, 4);
    randomize_params(ps, 24);
    const Tensor content = random_tensor({cfg.d_content, 8}, 61, 0.8);
    const Tensor f0 = random_tensor({1, 32}, 62, 0.8);
    const Tensor sty = random_tensor({cfg.d_style}, 63, 0.8);
    const Tensor w = random_tensor({8, 80}, 64, 1.0);
    auto loss = [&](const nets::ParamStore& p, nets::GradMap* grads) {
      nets::Tape tape;
      nets::ParamBinder binder(tape, p, grads != nullptr);
      const auto sf = nets::source_filter_forward(tape, binder, cfg, tape.leaf(content),
                                                  tape.leaf(f0), tape.leaf(sty));
      const auto l = tape.dot_const(sf.z_m, w);
      if (grads) {
        tape.backward(l);
        binder.collect_grads(*grads);
      }
      return tape.val(l)[0];
    };
    nets::ParamStore enc_only;
    for (const auto& [name, t] : ps.tensors)
      if (name.rfind("v_src.", 0) == 0 || name.rfind("v_ftr.", 0) == 0)
        enc_only.tensors.emplace(name, t);
    check_le(out, "gradcheck", "source_filter_encoder", gradcheck(enc_only, loss), 1e-3);
  }

  // Style embedder.
  {
    nets::ParamStore ps;
    nets::init_voice_stage(ps, cfg, 5);
    randomize_params(ps, 25);
    const Tensor stats = random_tensor({2 * static_cast<std::int64_t>(cfg.n_mels)}, 71, 0.8);
    const Tensor w = random_tensor({cfg.d_style}, 72, 1.0);
    auto loss = [&](const nets::ParamStore& p, nets::GradMap* grads) {
      nets::Tape tape;
      nets::ParamBinder binder(tape, p, grads != nullptr);
      const auto node = nets::style_embed_forward(tape, binder, cfg, "v_sty",
                                                  tape.leaf(stats));
      const auto l = tape.dot_const(node, w);
      if (grads) {
        tape.backward(l);
        binder.collect_grads(*grads);
      }
      return tape.val(l)[0];
    };
    nets::ParamStore sty_only;
    for (const auto& [name, t] : ps.tensors)
      if (name.rfind("v_sty.", 0) == 0) sty_only.tensors.emplace(name, t);
    check_le(out, "gradcheck", "style_embedder", gradcheck(sty_only, loss), 1e-3);
  }
}

}  // namespace

std::vector<CheckRecord> run_suite(const std::string& suite, Mutation mutation) {
  std::vector<CheckRecord> out;
  bool known = false;
  if (suite == "all" || suite == "marginal") {
    suite_marginal(out);
    known = true;
  }
  if (suite == "all" || suite == "score") {
    suite_score(out);
    known = true;
  }
  if (suite == "all" || suite == "sampler") {
    suite_sampler(out, mutation);
    known = true;
  }
  if (suite == "all" || suite == "gradcheck") {
    suite_gradcheck(out);
    known = true;
  }
  if (!known) throw DomainError("unknown oracle suite: " + suite);
  return out;
}

bool all_pass(const std::vector<CheckRecord>& records) {
  for (const auto& r : records)
    if (!r.pass) return false;
  return true;
}

void print_table(std::ostream& os, const std::vector<CheckRecord>& records) {
  for (const auto& r : records) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-5s %-10s %-34s %13.6g <= %-10.6g\n",
                  r.pass ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(), r.value,
                  r.threshold);
    os << line;
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<CheckRecord>& records) {
  std::string text = "suite,check,value,threshold,pass\n";
  for (const auto& r : records) {
    char line[200];
    std::snprintf(line, sizeof(line), "%s,%s,%.9g,%.9g,%d\n", r.suite.c_str(),
                  r.name.c_str(), r.value, r.threshold, r.pass ? 1 : 0);
    text += line;
  }
  io::write_text_file(path, text);
}

}  // namespace dhvc::verify
