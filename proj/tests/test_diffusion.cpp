#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dhvc/diffusion.hpp"
#include "dhvc/errors.hpp"
#include "dhvc/oracle.hpp"
#include "dhvc/rng.hpp"

using namespace dhvc;
namespace diff = dhvc::diffusion;

TEST_SUITE_BEGIN("diffusion");

TEST_CASE("int_beta closed form and domain") {
  const NoiseSchedule sched;
  CHECK(diff::int_beta(sched, 0.0) == 0.0);
  CHECK(diff::int_beta(sched, 0.5) == doctest::Approx(2.51875).epsilon(1e-12));
  CHECK(diff::int_beta(sched, 1.0) == doctest::Approx(10.025).epsilon(1e-12));
  CHECK_THROWS_AS(diff::int_beta(sched, -0.01), DomainError);
  CHECK_THROWS_AS(diff::int_beta(sched, 1.01), DomainError);
}

TEST_CASE("marginal_params frozen values") {
  const NoiseSchedule sched;
  const auto m0 = diff::marginal_params(sched, 0.0);
  CHECK(m0.alpha == 1.0);
  CHECK(m0.variance == 0.0);
  const auto m5 = diff::marginal_params(sched, 0.5);
  CHECK(m5.alpha == doctest::Approx(0.28383).epsilon(1e-4));
  CHECK(m5.variance == doctest::Approx(0.91944).epsilon(1e-4));
  const auto m1 = diff::marginal_params(sched, 1.0);
  CHECK(m1.alpha == doctest::Approx(0.006654).epsilon(1e-3));
  CHECK(m1.variance == doctest::Approx(0.999956).epsilon(1e-6));
}

TEST_CASE("loss weight equals the marginal variance and increases in t") {
  const NoiseSchedule sched;
  double prev = -1.0;
  for (int i = 0; i <= 40; ++i) {
    const double t = i / 40.0;
    const double w = diff::loss_weight(sched, t);
    CHECK(w == diff::marginal_params(sched, t).variance);
    CHECK(w > prev);
    prev = w;
  }
}

TEST_CASE("sample_forward is the identity at t=0 and deterministic per seed") {
  const NoiseSchedule sched;
  const Tensor x0 = Tensor::from({2.0, -1.0, 0.5});
  diff::DiffusionPrior prior;
  prior.z = Tensor::from({0.0, 1.0, -0.5});
  const Tensor at0 = diff::sample_forward(x0, prior, sched, 0.0, 5);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(at0[i] == x0[i]);
  const Tensor a = diff::sample_forward(x0, prior, sched, 0.7, 99);
  const Tensor b = diff::sample_forward(x0, prior, sched, 0.7, 99);
  CHECK(a.data == b.data);
  Tensor bad({2});
  CHECK_THROWS_AS(diff::sample_forward(bad, prior, sched, 0.5, 1), ShapeError);
}

TEST_CASE("sample_forward moments match the closed form at t=0.5") {
  const NoiseSchedule sched;
  const Tensor x0 = Tensor::scalar(2.0);
  diff::DiffusionPrior prior;
  prior.z = Tensor::scalar(-1.0);
  std::int64_t k = 0;
  const auto mom = oracle::mc_moments(
      [&] {
        return diff::sample_forward(x0, prior, sched, 0.5,
                                    mix_seed(77, static_cast<std::uint64_t>(k++)))[0];
      },
      20000);
  CHECK(std::abs(mom.mean - (-0.14851)) <= 3.0 * mom.se_mean + 1e-5);
  CHECK(std::abs(mom.stddev - 0.95887) <= 3.0 * mom.se_stddev + 1e-5);
}

TEST_CASE("analytic score is zero at the marginal mean and matches the frozen value") {
  const NoiseSchedule sched;
  diff::DiffusionPrior prior;
  prior.z = Tensor::scalar(-0.3);
  const Tensor x0 = Tensor::scalar(1.7);
  const auto m = diff::marginal_params(sched, 0.4);
  const double mean = m.alpha * 1.7 + (1.0 - m.alpha) * (-0.3);
  const Tensor s =
      diff::analytic_conditional_score(Tensor::scalar(mean), x0, prior, sched, 0.4);
  CHECK(std::abs(s[0]) < 1e-12);

  diff::DiffusionPrior zero;
  zero.z = Tensor::scalar(0.0);
  const Tensor f = diff::analytic_conditional_score(Tensor::scalar(1.0),
                                                    Tensor::scalar(1.0), zero, sched, 0.5);
  CHECK(f[0] == doctest::Approx(-0.77892).epsilon(1e-4));
  CHECK_THROWS_AS(diff::analytic_conditional_score(Tensor::scalar(1.0), Tensor::scalar(1.0),
                                                   zero, sched, 0.0),
                  DomainError);
}

TEST_CASE("dsm_loss is zero for the oracle and invariant to batch order") {
  const NoiseSchedule sched;
  diff::DiffusionPrior prior;
  prior.z = Tensor::from({0.2, -0.4});
  const Tensor x0 = Tensor::from({1.0, 0.5});
  std::vector<diff::TimeSeed> batch;
  Rng rng(5);
  for (int i = 0; i < 64; ++i)
    batch.push_back({0.05 + 0.95 * rng.uniform(), static_cast<std::uint64_t>(i * 17 + 3)});

  const auto oracle_fn = [&](const Tensor& x_t, const Tensor&, double t) {
    return diff::analytic_conditional_score(x_t, x0, prior, sched, t);
  };
  CHECK(diff::dsm_loss(oracle_fn, x0, prior, sched, batch).loss == 0.0);

  const auto noisy_fn = [&](const Tensor& x_t, const Tensor&, double t) {
    Tensor s = diff::analytic_conditional_score(x_t, x0, prior, sched, t);
    for (auto& v : s.data) v += 0.3;
    return s;
  };
  const double forward_loss = diff::dsm_loss(noisy_fn, x0, prior, sched, batch).loss;
  std::vector<diff::TimeSeed> shuffled(batch.rbegin(), batch.rend());
  const double reversed_loss = diff::dsm_loss(noisy_fn, x0, prior, sched, shuffled).loss;
  CHECK(forward_loss == doctest::Approx(reversed_loss).epsilon(1e-12));
  CHECK(forward_loss > 0.0);
}

TEST_CASE("dsm_loss reports the offending t for non-finite estimates") {
  const NoiseSchedule sched;
  diff::DiffusionPrior prior;
  prior.z = Tensor::scalar(0.0);
  const Tensor x0 = Tensor::scalar(0.0);
  const auto nan_fn = [](const Tensor& x_t, const Tensor&, double) {
    Tensor s(x_t.shape);
    s[0] = std::numeric_limits<double>::quiet_NaN();
    return s;
  };
  try {
    diff::dsm_loss(nan_fn, x0, prior, sched, {{0.625, 1}});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("0.625") != std::string::npos);
  }
  CHECK_THROWS_AS(
      diff::dsm_loss(nan_fn, x0, prior, sched, {{0.0, 1}}), DomainError);
}

TEST_CASE("apply_frequency_mask masks exactly round(ratio*80) bins") {
  diff::DiffusionPrior prior;
  prior.z = Tensor({20, 80}, 1.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto masked03 = diff::apply_frequency_mask(prior, 0.3, seed);
    const auto masked09 = diff::apply_frequency_mask(prior, 0.9, seed);
    std::int64_t bins03 = 0, bins09 = 0;
    for (std::int64_t b = 0; b < 80; ++b) {
      bins03 += masked03.mask[static_cast<std::size_t>(b)] != 0;
      bins09 += masked09.mask[static_cast<std::size_t>(b)] != 0;
    }
    CHECK(bins03 == 24);
    CHECK(bins09 == 72);
    CHECK(masked03.masked_count() == 24 * 20);
    // Masked cells carry the log floor; the whole column is masked.
    for (std::int64_t f = 0; f < 20; ++f)
      for (std::int64_t b = 0; b < 80; ++b) {
        const std::size_t i = static_cast<std::size_t>(f * 80 + b);
        CHECK(masked03.mask[i] == masked03.mask[static_cast<std::size_t>(b)]);
        if (masked03.mask[i])
          CHECK(masked03.z[static_cast<std::int64_t>(i)] ==
                doctest::Approx(diff::mel_log_floor()));
        else
          CHECK(masked03.z[static_cast<std::int64_t>(i)] == 1.0);
      }
  }
  const auto identity = diff::apply_frequency_mask(prior, 0.0, 3);
  CHECK_FALSE(identity.has_mask());
  CHECK(identity.z.data == prior.z.data);
  CHECK_THROWS_AS(diff::apply_frequency_mask(prior, 1.0, 1), DomainError);
  diff::DiffusionPrior contour;
  contour.z = Tensor({100});
  CHECK_THROWS_AS(diff::apply_frequency_mask(contour, 0.3, 1), ShapeError);
}

TEST_CASE("reverse_sample smoke: 6 vs 30 steps both finite") {
  const NoiseSchedule sched;
  diff::DiffusionPrior prior;
  prior.z = Tensor({8}, 0.5);
  const Tensor x0({8}, 1.5);
  const auto score = [&](const Tensor& x_t, const Tensor&, double t) {
    return diff::analytic_conditional_score(x_t, x0, prior, sched, t);
  };
  diff::SamplerConfig cfg6{6, 1.0, 11};
  diff::SamplerConfig cfg30{30, 1.0, 11};
  const Tensor a = diff::reverse_sample(score, prior, sched, cfg6, {8});
  const Tensor b = diff::reverse_sample(score, prior, sched, cfg30, {8});
  CHECK(a.all_finite());
  CHECK(b.all_finite());
  double gap = 0.0;
  for (std::int64_t i = 0; i < 8; ++i) gap += (a[i] - b[i]) * (a[i] - b[i]);
  MESSAGE("L2 gap between 6- and 30-step outputs: ", std::sqrt(gap));
  // Determinism.
  const Tensor c = diff::reverse_sample(score, prior, sched, cfg6, {8});
  CHECK(a.data == c.data);
}

TEST_CASE("reverse_sample reports the diverging step index") {
  const NoiseSchedule sched;
  diff::DiffusionPrior prior;
  prior.z = Tensor::scalar(0.0);
  const auto explode = [](const Tensor& x_t, const Tensor&, double) {
    Tensor s(x_t.shape);
    for (auto& v : s.data) v = 1e308;
    return s;
  };
  diff::SamplerConfig cfg{10, 1.0, 1};
  try {
    diff::reverse_sample(explode, prior, sched, cfg, {1});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step >= 1);
  }
}

TEST_SUITE_END();
