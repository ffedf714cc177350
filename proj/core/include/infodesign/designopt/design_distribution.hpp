#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "infodesign/grad/tape.hpp"
#include "infodesign/sim/simulator.hpp"

namespace infodesign::designopt {

// Truncated normal over designs. Only the mean is trained; the width follows
// sigma_n = sigma_end + (sigma_start - sigma_end) * exp(-n * rho / N).
struct DesignDistribution {
  std::vector<double> mu;
  double sigma_start = 0.0;
  double sigma_end = 0.0;
  double rho = 5.0;
  sim::DesignBounds bounds;
  std::size_t step = 0;
  std::size_t total_steps = 1;

  std::size_t dim() const noexcept { return mu.size(); }
  double sigma() const;
  void validate() const;
  // Projects mu back into the bounds after an update.
  void clamp_mean();
};

double sigma_schedule(const DesignDistribution& dist, std::size_t n);

// Inverse-CDF draw from N(mu, sigma^2) truncated to [lower, upper] at
// uniform v in (0, 1). sigma == 0 returns mu clamped to the bounds.
double truncated_normal(double mu, double sigma, double lower, double upper, double v);
// d draw / d mu at fixed v.
double truncated_normal_dmu(double mu, double sigma, double lower, double upper, double v, double draw);

// Uniform variates for `count` rows, one stream per row.
grad::Tensor design_uniforms(std::size_t count, std::size_t dim, std::uint64_t seed, std::uint64_t step);

// Draws `v.rows()` designs from a (1 x dim) mean on the tape. The result is
// differentiable with respect to mu; sigma and the bounds are constants.
grad::Var sample_designs(grad::Var mu, double sigma, const sim::DesignBounds& bounds, grad::Tensor v);
grad::Tensor sample_designs(std::span<const double> mu, double sigma, const sim::DesignBounds& bounds,
                            const grad::Tensor& v);

}  // namespace infodesign::designopt
