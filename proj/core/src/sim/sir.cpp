#include "infodesign/sim/sir.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace infodesign::sim {
namespace {

std::atomic<std::uint64_t> g_out_of_range{0};

std::uint64_t observation_key(std::uint64_t key) noexcept { return mix64(key ^ 0x6f62736572766531ULL); }

double clamp_design(double xi, double t_max) {
  if (xi < 0.0 || xi > t_max || !std::isfinite(xi)) {
    const auto n = g_out_of_range.fetch_add(1, std::memory_order_relaxed);
    if (n < 5) spdlog::warn("SIR design {} outside [0, {}] was clamped", xi, t_max);
    return std::isfinite(xi) ? std::clamp(xi, 0.0, t_max) : 0.0;
  }
  return xi;
}

std::uint64_t table_hash(const grad::Tensor& thetas) {
  std::uint64_t h = mix64(thetas.rows() * 31 + thetas.cols());
  for (double v : thetas.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

constexpr std::array<char, 8> kGridMagic{'I', 'D', 'S', 'I', 'R', 'G', '\0', '\1'};

}  // namespace

std::size_t SirSettings::steps() const {
  if (!(dt > 0.0) || !(t_max > 0.0)) throw std::invalid_argument("SIR grid needs dt > 0 and t_max > 0");
  return static_cast<std::size_t>(std::llround(t_max / dt));
}

double SirGrid::infected_at(std::size_t row, double t, bool interpolate) const {
  const double pos = t / settings.dt;
  if (!interpolate) {
    const auto k = static_cast<std::size_t>(std::clamp<long long>(std::llround(pos), 0, static_cast<long long>(points - 1)));
    return infected(row, k);
  }
  const double clamped = std::clamp(pos, 0.0, static_cast<double>(points - 1));
  const auto k0 = static_cast<std::size_t>(std::floor(clamped));
  const std::size_t k1 = std::min(k0 + 1, points - 1);
  const double w = clamped - static_cast<double>(k0);
  return (1.0 - w) * infected(row, k0) + w * infected(row, k1);
}

SirTrajectoryStats sir_integrate(double beta, double gamma, const SirSettings& s, std::uint64_t key,
                                 std::span<float> S, std::span<float> I) {
  const std::size_t steps = s.steps();
  if (S.size() < steps + 1 || I.size() < steps + 1) throw std::invalid_argument("trajectory buffers too small");
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw SimulationError("SIR rates must be non-negative");
  CounterRng rng(key);
  const double n = s.population;
  const double sqdt = std::sqrt(s.dt);
  double sv = n - s.initial_infected;
  double iv = s.initial_infected;
  SirTrajectoryStats stats;
  S[0] = static_cast<float>(sv);
  I[0] = static_cast<float>(iv);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double infection = beta * sv * iv / n;
    const double recovery = gamma * iv;
    double dw1 = 0.0, dw2 = 0.0;
    if (s.noise_scale > 0.0) {
      dw1 = rng.normal() * sqdt;
      dw2 = rng.normal() * sqdt;
    }
    const double new_inf = infection * s.dt + s.noise_scale * std::sqrt(infection) * dw1;
    const double new_rec = recovery * s.dt + s.noise_scale * std::sqrt(recovery) * dw2;
    double next_s = sv - new_inf;
    double next_i = iv + new_inf - new_rec;
    if (!std::isfinite(next_s) || !std::isfinite(next_i)) {
      std::ostringstream msg;
      msg << "non-finite SIR state for beta=" << beta << " gamma=" << gamma << " at step " << k;
      throw SimulationError(msg.str());
    }
    bool clamped = false;
    if (next_s < 0.0) { next_s = 0.0; clamped = true; }
    if (next_s > n) { next_s = n; clamped = true; }
    if (next_i < 0.0) { next_i = 0.0; clamped = true; }
    if (next_s + next_i > n) { next_i = n - next_s; clamped = true; }
    if (clamped) ++stats.clamp_events;
    sv = next_s;
    iv = next_i;
    S[k] = static_cast<float>(sv);
    I[k] = static_cast<float>(iv);
  }
  return stats;
}

SirGrid sir_pregrid(const grad::Tensor& thetas, std::uint64_t seed, const SirSettings& settings) {
  if (thetas.cols() != 2) throw std::invalid_argument("SIR parameters are (beta, gamma)");
  SirGrid grid;
  grid.settings = settings;
  grid.thetas = thetas;
  grid.points = settings.steps() + 1;
  grid.S.resize(thetas.rows() * grid.points);
  grid.I.resize(thetas.rows() * grid.points);
  for (std::size_t r = 0; r < thetas.rows(); ++r) {
    std::span<float> s(grid.S.data() + r * grid.points, grid.points);
    std::span<float> i(grid.I.data() + r * grid.points, grid.points);
    const auto stats = sir_integrate(thetas(r, 0), thetas(r, 1), settings, stream_key(seed, StreamId::Pool, 0, r), s, i);
    grid.clamp_events += stats.clamp_events;
  }
  return grid;
}

double sir_observe_count(double infected, const SirSettings& s, std::uint64_t key) {
  switch (s.observation) {
    case SirObservation::None: return infected;
    case SirObservation::Gaussian: {
      CounterRng rng(key);
      return infected + std::sqrt(infected + 1.0) * rng.normal();
    }
    case SirObservation::Poisson: {
      CounterRng rng(key);
      return std::min(static_cast<double>(rng.poisson(infected)), s.population);
    }
  }
  return infected;
}

double sir_observe(const SirGrid& grid, std::size_t row, double xi, std::uint64_t key) {
  const double t = clamp_design(xi, grid.settings.t_max);
  return sir_observe_count(grid.infected_at(row, t, grid.settings.interpolate), grid.settings, key);
}

std::filesystem::path sir_cache_path(const std::filesystem::path& dir, const grad::Tensor& thetas, std::uint64_t seed,
                                     const SirSettings& s) {
  std::uint64_t h = mix64(seed ^ table_hash(thetas));
  std::uint64_t bits;
  std::memcpy(&bits, &s.dt, sizeof bits);
  h = mix64(h ^ bits);
  std::memcpy(&bits, &s.t_max, sizeof bits);
  h = mix64(h ^ bits);
  std::memcpy(&bits, &s.noise_scale, sizeof bits);
  h = mix64(h ^ bits);
  std::ostringstream name;
  name << "sir_grid_" << std::hex << h << ".bin";
  return dir / name.str();
}

void save_sir_grid(const std::filesystem::path& path, const SirGrid& grid, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SimulationError("cannot write SIR cache " + path.string());
  const std::uint64_t header[] = {seed, table_hash(grid.thetas), grid.rows(), grid.points, grid.clamp_events};
  out.write(kGridMagic.data(), kGridMagic.size());
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(&grid.settings.dt), sizeof(double));
  out.write(reinterpret_cast<const char*>(&grid.settings.t_max), sizeof(double));
  out.write(reinterpret_cast<const char*>(grid.S.data()), static_cast<std::streamsize>(grid.S.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(grid.I.data()), static_cast<std::streamsize>(grid.I.size() * sizeof(float)));
}

std::optional<SirGrid> load_sir_grid(const std::filesystem::path& path, const grad::Tensor& thetas,
                                     std::uint64_t seed, const SirSettings& settings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::array<char, 8> magic{};
  std::uint64_t header[5];
  double dt = 0.0, t_max = 0.0;
  if (!in.read(magic.data(), magic.size()) || magic != kGridMagic) return std::nullopt;
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) return std::nullopt;
  in.read(reinterpret_cast<char*>(&dt), sizeof dt);
  in.read(reinterpret_cast<char*>(&t_max), sizeof t_max);
  if (!in || header[0] != seed || header[1] != table_hash(thetas) || header[2] != thetas.rows() ||
      header[3] != settings.steps() + 1 || dt != settings.dt || t_max != settings.t_max) {
    return std::nullopt;
  }
  SirGrid grid;
  grid.settings = settings;
  grid.thetas = thetas;
  grid.points = header[3];
  grid.clamp_events = header[4];
  grid.S.resize(grid.rows() * grid.points);
  grid.I.resize(grid.rows() * grid.points);
  in.read(reinterpret_cast<char*>(grid.S.data()), static_cast<std::streamsize>(grid.S.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(grid.I.data()), static_cast<std::streamsize>(grid.I.size() * sizeof(float)));
  if (!in) return std::nullopt;
  return grid;
}

namespace {

class SirPool final : public SimulationPool {
 public:
  explicit SirPool(SirGrid grid) : grid_(std::move(grid)) {}
  const grad::Tensor& thetas() const noexcept override { return grid_.thetas; }
  void simulate(std::size_t row, std::span<const double> xi, std::uint64_t key, std::span<double> y) const override {
    y[0] = sir_observe(grid_, row, xi[0], key);
  }
  const SirGrid& grid() const noexcept { return grid_; }

 private:
  SirGrid grid_;
};

}  // namespace

SirSimulator::SirSimulator(SirSettings settings, std::filesystem::path cache_dir)
    : settings_(settings),
      cache_dir_(std::move(cache_dir)),
      prior_({{PriorFamily::LogNormal, settings.log_beta_mean, settings.log_beta_sd},
              {PriorFamily::LogNormal, settings.log_gamma_mean, settings.log_gamma_sd}}),
      bounds_{{0.0}, {settings.t_max}} {
  settings_.steps();
  if (!(settings_.population > settings_.initial_infected) || !(settings_.initial_infected > 0.0)) {
    throw std::invalid_argument("SIR needs 0 < initial_infected < population");
  }
}

void SirSimulator::simulate(std::span<const double> theta, std::span<const double> xi, std::uint64_t key,
                            std::span<double> y) const {
  check_inputs(theta, xi, y);
  const double t = clamp_design(xi[0], settings_.t_max);
  SirSettings local = settings_;
  const std::size_t last = settings_.interpolate ? static_cast<std::size_t>(std::ceil(t / settings_.dt))
                                                 : static_cast<std::size_t>(std::llround(t / settings_.dt));
  local.t_max = std::max<double>(1.0, static_cast<double>(std::min(last, settings_.steps()))) * settings_.dt;
  const std::size_t points = local.steps() + 1;
  std::vector<float> s(points), i(points);
  sir_integrate(theta[0], theta[1], local, key, s, i);
  SirGrid view;
  view.settings = settings_;
  view.points = points;
  view.S = std::move(s);
  view.I = std::move(i);
  y[0] = sir_observe_count(view.infected_at(0, t, settings_.interpolate), settings_, observation_key(key));
}

std::shared_ptr<const SimulationPool> SirSimulator::prepare(grad::Tensor thetas, std::uint64_t seed) const {
  if (thetas.cols() != 2) throw std::invalid_argument("SIR parameter table must have two columns");
  if (!cache_dir_.empty()) {
    const auto path = sir_cache_path(cache_dir_, thetas, seed, settings_);
    if (auto cached = load_sir_grid(path, thetas, seed, settings_)) {
      cached->settings = settings_;
      return std::make_shared<SirPool>(std::move(*cached));
    }
    SirGrid grid = sir_pregrid(thetas, seed, settings_);
    std::filesystem::create_directories(cache_dir_);
    save_sir_grid(path, grid, seed);
    return std::make_shared<SirPool>(std::move(grid));
  }
  return std::make_shared<SirPool>(sir_pregrid(thetas, seed, settings_));
}

std::uint64_t SirSimulator::out_of_range_designs() const noexcept {
  return g_out_of_range.load(std::memory_order_relaxed);
}

}  // namespace infodesign::sim
