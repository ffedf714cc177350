#pragma once

#include <span>
#include <vector>

#include "infodesign/grad/tensor.hpp"
#include "infodesign/sim/rng.hpp"

namespace infodesign::sim {

enum class PriorFamily {
  Normal,     // a = mean, b = standard deviation
  LogNormal,  // log x ~ Normal(a, b^2)
  Uniform,    // x ~ U(a, b)
};

struct PriorFactor {
  PriorFamily family = PriorFamily::Normal;
  double a = 0.0;
  double b = 1.0;
};

// Product of independent one-dimensional priors. Every factor has a smooth
// bijection to the real line (identity, log, logit) used by MCMC.
class Prior {
 public:
  Prior() = default;
  explicit Prior(std::vector<PriorFactor> factors);

  std::size_t dim() const noexcept { return factors_.size(); }
  const std::vector<PriorFactor>& factors() const noexcept { return factors_; }

  std::vector<double> sample(CounterRng& rng) const;
  // n x dim table, row i drawn from stream (seed, module, step, i).
  grad::Tensor sample_table(std::size_t n, std::uint64_t seed, StreamId module, std::uint64_t step = 0) const;

  bool in_support(std::span<const double> theta) const noexcept;
  // -inf outside the support.
  double log_density(std::span<const double> theta) const noexcept;

  std::vector<double> mean() const;
  std::vector<double> stddev() const;

  std::vector<double> to_unconstrained(std::span<const double> theta) const;
  std::vector<double> from_unconstrained(std::span<const double> z) const;
  // log |d theta / d z| summed over coordinates.
  double log_abs_jacobian(std::span<const double> z) const noexcept;

 private:
  std::vector<PriorFactor> factors_;
};

}  // namespace infodesign::sim
