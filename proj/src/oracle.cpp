#include "dhvc/oracle.hpp"

#include <cmath>
#include <string>

#include "dhvc/errors.hpp"

namespace dhvc::oracle {

GaussianMarginal gaussian_marginal(const GaussianToy& toy, const NoiseSchedule& sched,
                                   double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("gaussian_marginal: t outside [0, 1]");
  // Re-derived on purpose; do not replace with diffusion::marginal_params.
  const double ib = sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t;
  const double a = std::exp(-0.5 * ib);
  const double mean = a * toy.mu0 + (1.0 - a) * toy.z;
  const double var = a * a * toy.sigma0 * toy.sigma0 + (1.0 - std::exp(-ib));
  return {mean, var};
}

double gaussian_marginal_score(const GaussianToy& toy, const NoiseSchedule& sched,
                               double t, double x_t) {
  const auto m = gaussian_marginal(toy, sched, t);
  if (m.variance <= 0.0)
    throw DomainError("gaussian_marginal_score: singular marginal at t = " +
                      std::to_string(t));
  return -(x_t - m.mean) / m.variance;
}

std::vector<double> finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& point, double step) {
  std::vector<double> grad(point.size(), 0.0);
  std::vector<double> x = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    x[i] = point[i] + step;
    const double fp = f(x);
    x[i] = point[i] - step;
    const double fm = f(x);
    x[i] = point[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalError("finite_diff_check: non-finite evaluation at coordinate " +
                           std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

Moments mc_moments(const std::function<double()>& sampler, std::int64_t n) {
  if (n < 100) throw DomainError("mc_moments: n must be >= 100");
  double sum = 0.0;
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (auto& v : xs) {
    v = sampler();
    sum += v;
  }
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : xs) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n - 1));
  Moments m;
  m.mean = mean;
  m.stddev = sd;
  m.se_mean = sd / std::sqrt(static_cast<double>(n));
  m.se_stddev = sd / std::sqrt(2.0 * static_cast<double>(n));
  m.n = n;
  return m;
}

}  // namespace dhvc::oracle
