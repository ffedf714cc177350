#include "infodesign/inference/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <spdlog/spdlog.h>

#include "infodesign/sim/rng.hpp"

namespace infodesign::inference {

std::vector<double> SbcSettings::default_levels() {
  std::vector<double> l;
  for (int i = 1; i <= 19; ++i) l.push_back(i / 20.0);
  return l;
}

PosteriorSampler mcmc_sampler(const flow::ConditionalFlow& flow, const sim::Prior& prior, McmcSettings settings) {
  return [&flow, &prior, settings](const std::vector<Observation>& history, std::size_t draws, std::uint64_t seed) {
    McmcSettings s = settings;
    s.seed = seed;
    ProductTarget target(prior, history, flow_term(flow));
    const auto set = mcmc_posterior(target, s);
    const std::size_t total = set.samples.rows();
    if (total < draws) throw InferenceError("MCMC kept fewer draws than requested");
    grad::Tensor out(draws, set.samples.cols());
    // Evenly spaced draws across the chains to limit autocorrelation.
    for (std::size_t i = 0; i < draws; ++i) {
      const std::size_t k = (2 * i + 1) * total / (2 * draws);
      std::copy_n(set.samples.row_span(k).begin(), set.samples.cols(), out.row_span(i).begin());
    }
    return out;
  };
}

PosteriorSampler prior_sampler(const sim::Prior& prior) {
  return [&prior](const std::vector<Observation>&, std::size_t draws, std::uint64_t seed) {
    return prior.sample_table(draws, seed, sim::StreamId::Sampling);
  };
}

PosteriorSampler inflate_variance(PosteriorSampler inner, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("variance factor must be positive");
  return [inner = std::move(inner), factor](const std::vector<Observation>& h, std::size_t draws, std::uint64_t seed) {
    grad::Tensor t = inner(h, draws, seed);
    const double k = std::sqrt(factor);
    for (std::size_t d = 0; d < t.cols(); ++d) {
      double m = 0.0;
      for (std::size_t r = 0; r < t.rows(); ++r) m += t(r, d);
      m /= static_cast<double>(t.rows());
      for (std::size_t r = 0; r < t.rows(); ++r) t(r, d) = m + k * (t(r, d) - m);
    }
    return t;
  };
}

bool CoverageCurve::within_band() const {
  for (const auto& dim : coverage) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (dim[l] < band_lower[l] || dim[l] > band_upper[l]) return false;
    }
  }
  return true;
}

std::vector<double> CoverageCurve::rank_uniformity_pvalue(std::size_t bins, std::size_t draws) const {
  const std::size_t values = draws + 1;
  if (bins == 0 || values % bins != 0) throw std::invalid_argument("rank bins must divide draws + 1");
  std::vector<double> out;
  const std::size_t dims = ranks.empty() ? 0 : ranks[0].size();
  for (std::size_t d = 0; d < dims; ++d) {
    std::vector<double> counts(bins, 0.0);
    for (const auto& r : ranks) counts[r[d] / (values / bins)] += 1.0;
    const double expected = static_cast<double>(ranks.size()) / static_cast<double>(bins);
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared_distribution<double> dist(static_cast<double>(bins - 1));
    out.push_back(boost::math::cdf(boost::math::complement(dist, chi2)));
  }
  return out;
}

CoverageCurve sbc_coverage(const sim::Simulator& simulator, const std::vector<std::vector<double>>& designs,
                           const PosteriorSampler& sampler, const SbcSettings& settings) {
  if (settings.trials < 1 || settings.draws < 1) throw std::invalid_argument("SBC needs trials and draws");
  if (designs.empty()) throw std::invalid_argument("SBC needs at least one design");
  const std::size_t dim = simulator.theta_dim();
  const std::size_t values = settings.draws + 1;
  CoverageCurve curve;
  curve.levels = settings.levels;
  for (std::size_t t = 0; t < settings.trials; ++t) {
    auto rng = sim::make_stream(settings.seed, sim::StreamId::Calibration, 0, t);
    const auto theta = simulator.prior().sample(rng);
    std::vector<Observation> history;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      history.push_back({designs[i], simulator.simulate(theta, designs[i],
                                                        sim::stream_key(settings.seed, sim::StreamId::Calibration, 1 + i, t))});
    }
    grad::Tensor draws;
    try {
      draws = sampler(history, settings.draws, sim::stream_key(settings.seed, sim::StreamId::Calibration, 0, t));
    } catch (const std::exception& e) {
      ++curve.failed;
      spdlog::warn("SBC trial {} failed: {}", t, e.what());
      continue;
    }
    std::vector<std::uint32_t> r(dim, 0);
    for (std::size_t d = 0; d < dim; ++d) {
      for (std::size_t k = 0; k < draws.rows(); ++k) r[d] += draws(k, d) < theta[d];
    }
    curve.ranks.push_back(std::move(r));
  }
  curve.trials = curve.ranks.size();
  if (curve.trials == 0) throw InferenceError("every SBC trial failed");
  curve.coverage.assign(dim, std::vector<double>(curve.levels.size(), 0.0));
  for (std::size_t l = 0; l < curve.levels.size(); ++l) {
    // Central interval of the discrete rank distribution holding `inside` of
    // its `values` equally likely outcomes.
    const auto inside = static_cast<std::size_t>(std::lround(curve.levels[l] * static_cast<double>(values)));
    const std::size_t lo = (values - inside) / 2;
    for (std::size_t d = 0; d < dim; ++d) {
      std::size_t hits = 0;
      for (const auto& r : curve.ranks) hits += (r[d] >= lo && r[d] < lo + inside);
      curve.coverage[d][l] = static_cast<double>(hits) / static_cast<double>(curve.trials);
    }
    const boost::math::binomial_distribution<double> binom(static_cast<double>(curve.trials), curve.levels[l]);
    curve.band_lower.push_back(boost::math::quantile(binom, 0.025) / static_cast<double>(curve.trials));
    curve.band_upper.push_back(boost::math::quantile(binom, 0.975) / static_cast<double>(curve.trials));
  }
  return curve;
}

double median_distance(const grad::Tensor& predictive, std::span<const double> y_obs) {
  if (predictive.rows() == 0) throw std::invalid_argument("median distance needs predictive samples");
  if (predictive.cols() != y_obs.size()) throw grad::ShapeError("predictive samples and observation differ in width");
  std::vector<double> d(predictive.rows());
  for (std::size_t r = 0; r < predictive.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < predictive.cols(); ++c) s += (predictive(r, c) - y_obs[c]) * (predictive(r, c) - y_obs[c]);
    d[r] = std::sqrt(s);
  }
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  if (d.size() % 2 == 1) return d[mid];
  const double upper = d[mid];
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

namespace {

nlohmann::json mean_se(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  nlohmann::json j{{"mean", m}, {"n", v.size()}};
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    j["se"] = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  } else {
    j["se"] = nullptr;
  }
  return j;
}

}  // namespace

nlohmann::json eig_report(const std::vector<SeedRecord>& records) {
  nlohmann::json out;
  out["seeds"] = nlohmann::json::array();
  std::size_t rounds = 0;
  for (const auto& r : records) {
    out["seeds"].push_back(r.seed);
    rounds = std::max(rounds, r.round_eig.size());
  }
  out["rounds"] = nlohmann::json::array();
  for (std::size_t t = 0; t < rounds; ++t) {
    std::vector<double> v;
    for (const auto& r : records) {
      if (t < r.round_eig.size()) v.push_back(r.round_eig[t]);
    }
    nlohmann::json row{{"round", t + 1}, {"eig", mean_se(v)}, {"checkpoint_eig", v}};
    out["rounds"].push_back(std::move(row));
  }
  std::vector<double> final_eig, distance;
  for (const auto& r : records) {
    if (!r.round_eig.empty()) final_eig.push_back(r.round_eig.back());
    if (r.median_distance) distance.push_back(*r.median_distance);
  }
  out["eig"] = final_eig.empty() ? nlohmann::json(nullptr) : mean_se(final_eig);
  out["median_distance"] = distance.empty() ? nlohmann::json(nullptr) : mean_se(distance);
  out["l_c2st"] = "n/a (out of scope)";
  out["eig_estimator"] = "InfoNCE, lambda-free, checkpoint step batch";
  return out;
}

}  // namespace infodesign::inference
