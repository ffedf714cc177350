#include "infodesign/sim/rng.hpp"

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <stdexcept>

namespace infodesign::sim {

double CounterRng::normal() {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(*this);
}

double CounterRng::gamma(double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) throw std::invalid_argument("gamma shape and scale must be positive");
  boost::random::gamma_distribution<double> dist(shape, scale);
  return dist(*this);
}

long CounterRng::poisson(double mean) {
  if (!(mean >= 0.0)) throw std::invalid_argument("poisson mean must be non-negative");
  if (mean == 0.0) return 0;
  boost::random::poisson_distribution<long, double> dist(mean);
  return dist(*this);
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, StreamId module, std::uint64_t step, std::uint64_t row) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ (static_cast<std::uint64_t>(module) * 0xd6e8feb86659fd93ULL));
  h = mix64(h ^ (step * 0xa0761d6478bd642fULL));
  h = mix64(h ^ (row * 0xe7037ed1a0b428dbULL));
  return h;
}

}  // namespace infodesign::sim
