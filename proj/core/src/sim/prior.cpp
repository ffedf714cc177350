#include "infodesign/sim/prior.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace infodesign::sim {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double log1pexp(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Prior::Prior(std::vector<PriorFactor> factors) : factors_(std::move(factors)) {
  for (const auto& f : factors_) {
    const bool ok = f.family == PriorFamily::Uniform ? f.b > f.a : f.b > 0.0;
    if (!ok || !std::isfinite(f.a) || !std::isfinite(f.b)) throw std::invalid_argument("invalid prior factor");
  }
}

std::vector<double> Prior::sample(CounterRng& rng) const {
  std::vector<double> theta(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: theta[i] = f.a + f.b * rng.normal(); break;
      case PriorFamily::LogNormal: theta[i] = std::exp(f.a + f.b * rng.normal()); break;
      case PriorFamily::Uniform: theta[i] = f.a + (f.b - f.a) * rng.uniform(); break;
    }
  }
  return theta;
}

grad::Tensor Prior::sample_table(std::size_t n, std::uint64_t seed, StreamId module, std::uint64_t step) const {
  grad::Tensor out(n, dim());
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = make_stream(seed, module, step, r);
    const auto theta = sample(rng);
    for (std::size_t c = 0; c < dim(); ++c) out(r, c) = theta[c];
  }
  return out;
}

bool Prior::in_support(std::span<const double> theta) const noexcept {
  if (theta.size() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    if (!std::isfinite(theta[i])) return false;
    if (f.family == PriorFamily::LogNormal && !(theta[i] > 0.0)) return false;
    if (f.family == PriorFamily::Uniform && !(theta[i] >= f.a && theta[i] <= f.b)) return false;
  }
  return true;
}

double Prior::log_density(std::span<const double> theta) const noexcept {
  if (!in_support(theta)) return -std::numeric_limits<double>::infinity();
  double lp = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: {
        const double z = (theta[i] - f.a) / f.b;
        lp += -0.5 * z * z - std::log(f.b) - kHalfLog2Pi;
        break;
      }
      case PriorFamily::LogNormal: {
        const double lx = std::log(theta[i]);
        const double z = (lx - f.a) / f.b;
        lp += -0.5 * z * z - std::log(f.b) - kHalfLog2Pi - lx;
        break;
      }
      case PriorFamily::Uniform: lp += -std::log(f.b - f.a); break;
    }
  }
  return lp;
}

std::vector<double> Prior::mean() const {
  std::vector<double> m(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: m[i] = f.a; break;
      case PriorFamily::LogNormal: m[i] = std::exp(f.a + 0.5 * f.b * f.b); break;
      case PriorFamily::Uniform: m[i] = 0.5 * (f.a + f.b); break;
    }
  }
  return m;
}

std::vector<double> Prior::stddev() const {
  std::vector<double> s(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: s[i] = f.b; break;
      case PriorFamily::LogNormal:
        s[i] = std::sqrt(std::expm1(f.b * f.b)) * std::exp(f.a + 0.5 * f.b * f.b);
        break;
      case PriorFamily::Uniform: s[i] = (f.b - f.a) / std::sqrt(12.0); break;
    }
  }
  return s;
}

std::vector<double> Prior::to_unconstrained(std::span<const double> theta) const {
  std::vector<double> z(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: z[i] = theta[i]; break;
      case PriorFamily::LogNormal: z[i] = std::log(theta[i]); break;
      case PriorFamily::Uniform: {
        const double p = (theta[i] - f.a) / (f.b - f.a);
        z[i] = std::log(p) - std::log1p(-p);
        break;
      }
    }
  }
  return z;
}

std::vector<double> Prior::from_unconstrained(std::span<const double> z) const {
  std::vector<double> theta(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: theta[i] = z[i]; break;
      case PriorFamily::LogNormal: theta[i] = std::exp(z[i]); break;
      case PriorFamily::Uniform: theta[i] = f.a + (f.b - f.a) / (1.0 + std::exp(-z[i])); break;
    }
  }
  return theta;
}

double Prior::log_abs_jacobian(std::span<const double> z) const noexcept {
  double lj = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    const auto& f = factors_[i];
    switch (f.family) {
      case PriorFamily::Normal: break;
      case PriorFamily::LogNormal: lj += z[i]; break;
      case PriorFamily::Uniform:
        lj += std::log(f.b - f.a) - log1pexp(z[i]) - log1pexp(-z[i]);
        break;
    }
  }
  return lj;
}

}  // namespace infodesign::sim
