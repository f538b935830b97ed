// dhvc/oracle.hpp -- independent verification oracles.
//
// Everything here re-derives the Gaussian marginal arithmetic from scratch;
// the only thing shared with the diffusion module is the NoiseSchedule
// struct, so a bug on either side shows up as a cross-check failure.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dhvc/schedule.hpp"

namespace dhvc::oracle {

// Scalar Gaussian data law N(mu0, sigma0^2) diffused toward prior value z.
struct GaussianToy {
  double mu0 = 0.0;
  double sigma0 = 1.0;
  double z = 0.0;
};

struct GaussianMarginal {
  double mean;
  double variance;
};

// Marginal law of X_t for the toy: N(alpha*mu0 + (1-alpha)*z, alpha^2*sigma0^2 + (1-alpha^2)).
GaussianMarginal gaussian_marginal(const GaussianToy& toy, const NoiseSchedule& sched,
                                   double t);

// Unconditional score -(x_t - mean_t) / var_t of the toy marginal.
// Throws DomainError when the marginal variance is zero (t = 0, sigma0 = 0).
double gaussian_marginal_score(const GaussianToy& toy, const NoiseSchedule& sched,
                               double t, double x_t);

// Central-difference gradient estimate of a scalar field.
// Throws NumericalError naming the coordinate if an evaluation is non-finite.
std::vector<double> finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& point,
                                      double step = 1e-3);

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
  double se_mean = 0.0;    // stddev / sqrt(n)
  double se_stddev = 0.0;  // stddev / sqrt(2n)
  std::int64_t n = 0;
};

// Sample mean / standard deviation (n-1 divisor) with standard errors.
// Requires n >= 100.
Moments mc_moments(const std::function<double()>& sampler, std::int64_t n);

}  // namespace dhvc::oracle
