#include "infodesign/inference/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "infodesign/sim/rng.hpp"

namespace infodesign::inference {
namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v, double m) {
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

ProductTarget::ProductTarget(const sim::Prior& prior, std::vector<Observation> history, Term term)
    : prior_(prior), history_(std::move(history)), term_(std::move(term)) {
  if (!history_.empty() && !term_) throw std::invalid_argument("product target needs a likelihood term");
}

std::vector<double> ProductTarget::log_density(const grad::Tensor& thetas) const {
  std::vector<double> out(thetas.rows());
  std::vector<std::uint32_t> inside;
  for (std::size_t r = 0; r < thetas.rows(); ++r) {
    out[r] = prior_.log_density(thetas.row_span(r));
    if (std::isfinite(out[r])) inside.push_back(static_cast<std::uint32_t>(r));
  }
  if (inside.empty() || history_.empty()) return out;
  grad::Tensor rows(inside.size(), thetas.cols());
  for (std::size_t k = 0; k < inside.size(); ++k) {
    std::copy_n(thetas.row_span(inside[k]).begin(), thetas.cols(), rows.row_span(k).begin());
  }
  for (std::size_t i = 0; i < history_.size(); ++i) {
    const auto ll = term_(rows, history_[i], i);
    for (std::size_t k = 0; k < inside.size(); ++k) out[inside[k]] += ll[k];
  }
  return out;
}

double ProductTarget::log_density(std::span<const double> theta) const {
  return log_density(grad::Tensor::row(theta))[0];
}

namespace {

std::vector<double> flow_log_likelihood(const flow::ConditionalFlow& flow, const grad::Tensor& thetas,
                                        const Observation& obs) {
  grad::Tape tape;
  grad::Var y = tape.constant(grad::Tensor::row(obs.y));
  grad::Var th = tape.constant(thetas);
  grad::Var xi;
  if (!obs.xi.empty()) xi = tape.constant(grad::Tensor::row(obs.xi));
  flow::FlowInputs in;
  in.y = y;
  in.theta = th;
  in.xi = xi;
  in.y_row.assign(thetas.rows(), 0);
  in.xi_row.assign(thetas.rows(), 0);
  in.theta_row.resize(thetas.rows());
  std::iota(in.theta_row.begin(), in.theta_row.end(), 0u);
  const auto& v = flow.log_prob(flow.bind(tape, false), in).value();
  return std::vector<double>(v.data().begin(), v.data().end());
}

}  // namespace

ProductTarget::Term flow_term(const flow::ConditionalFlow& flow) {
  return [&flow](const grad::Tensor& thetas, const Observation& obs, std::size_t) {
    return flow_log_likelihood(flow, thetas, obs);
  };
}

ProductTarget::Term flow_term(std::vector<const flow::ConditionalFlow*> flows) {
  if (flows.empty()) throw std::invalid_argument("flow_term needs at least one flow");
  return [flows = std::move(flows)](const grad::Tensor& thetas, const Observation& obs, std::size_t i) {
    return flow_log_likelihood(*flows[std::min(i, flows.size() - 1)], thetas, obs);
  };
}

std::vector<double> PosteriorSampleSet::mean() const {
  std::vector<double> m(samples.cols(), 0.0);
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    for (std::size_t d = 0; d < samples.cols(); ++d) m[d] += samples(r, d);
  }
  for (double& x : m) x /= static_cast<double>(samples.rows());
  return m;
}

std::vector<double> PosteriorSampleSet::variance() const {
  const auto m = mean();
  std::vector<double> v(samples.cols(), 0.0);
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    for (std::size_t d = 0; d < samples.cols(); ++d) v[d] += (samples(r, d) - m[d]) * (samples(r, d) - m[d]);
  }
  for (double& x : v) x /= static_cast<double>(samples.rows() - 1);
  return v;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) throw std::invalid_argument("split R-hat needs at least four draws per chain");
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  const double n = static_cast<double>(halves[0].size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& h : halves) {
    means.push_back(mean_of(h));
    w += var_of(h, means.back());
  }
  w /= static_cast<double>(halves.size());
  const double b = n * var_of(means, mean_of(means));
  if (w <= 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains[0].size();
  if (n < 4) throw std::invalid_argument("ESS needs at least four draws per chain");
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = var_of(chains[c], means[c]);
  }
  const double w = mean_of(vars);
  const double b = m > 1 ? static_cast<double>(n) * var_of(means, mean_of(means)) : 0.0;
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b / static_cast<double>(n);
  if (var_plus <= 0.0) return static_cast<double>(m * n);
  // Autocorrelation from the multi-chain variogram, summed over Geyer's
  // initial positive sequence of paired lags.
  auto rho = [&](std::size_t t) {
    double v = 0.0;
    for (const auto& c : chains) {
      for (std::size_t i = t; i < n; ++i) v += (c[i] - c[i - t]) * (c[i] - c[i - t]);
    }
    v /= static_cast<double>(m * (n - t));
    return 1.0 - v / (2.0 * var_plus);
  };
  double sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    sum += pair;
    prev_pair = pair;
  }
  const double tau = std::max(1.0 + 2.0 * sum, 1e-12);
  return static_cast<double>(m * n) / tau;
}

PosteriorSampleSet mcmc_posterior(const ProductTarget& target, const McmcSettings& s) {
  if (s.chains == 0 || s.draws < 4 || s.thin == 0) throw std::invalid_argument("invalid MCMC settings");
  const auto& prior = target.prior();
  const std::size_t dim = prior.dim();
  const std::size_t c_count = s.chains;

  // Unconstrained state per chain and its log target including the Jacobian.
  std::vector<std::vector<double>> z(c_count);
  std::vector<double> logp(c_count);
  std::vector<sim::CounterRng> rngs;
  for (std::size_t c = 0; c < c_count; ++c) rngs.push_back(sim::make_stream(s.seed, sim::StreamId::Mcmc, 0, c));

  auto evaluate = [&](const std::vector<std::vector<double>>& states) {
    grad::Tensor thetas(states.size(), dim);
    for (std::size_t c = 0; c < states.size(); ++c) {
      const auto th = prior.from_unconstrained(states[c]);
      std::copy(th.begin(), th.end(), thetas.row_span(c).begin());
    }
    auto lp = target.log_density(thetas);
    for (std::size_t c = 0; c < states.size(); ++c) lp[c] += prior.log_abs_jacobian(states[c]);
    return lp;
  };

  for (std::size_t c = 0; c < c_count; ++c) z[c] = prior.to_unconstrained(prior.sample(rngs[c]));
  logp = evaluate(z);

  // Proposal scale per dimension from the prior's spread in unconstrained space.
  std::vector<double> scale(dim, 1.0);
  {
    auto rng = sim::make_stream(s.seed, sim::StreamId::Mcmc, 1, 0);
    std::vector<std::vector<double>> pilot;
    for (int i = 0; i < 200; ++i) pilot.push_back(prior.to_unconstrained(prior.sample(rng)));
    for (std::size_t d = 0; d < dim; ++d) {
      std::vector<double> col;
      for (const auto& p : pilot) col.push_back(p[d]);
      scale[d] = std::sqrt(std::max(var_of(col, mean_of(col)), 1e-12));
    }
  }
  double log_step = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
  // Running moments of warm-up draws for the diagonal adaptation.
  std::vector<double> run_mean(dim, 0.0), run_m2(dim, 0.0);
  std::size_t run_n = 0;

  PosteriorSampleSet out;
  out.history = target.history();
  const std::size_t kept = s.draws / s.thin;
  std::vector<std::vector<std::vector<double>>> per_chain(dim, std::vector<std::vector<double>>(c_count));
  std::vector<std::size_t> accepted(c_count, 0);
  std::vector<std::size_t> warm_accepted(c_count, 0);

  const std::size_t total = s.warmup + s.draws;
  std::vector<std::vector<double>> proposal(c_count, std::vector<double>(dim));
  for (std::size_t it = 0; it < total; ++it) {
    const bool warm = it < s.warmup;
    const double step = std::exp(log_step);
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t d = 0; d < dim; ++d) proposal[c][d] = z[c][d] + step * scale[d] * rngs[c].normal();
    }
    const auto lp_new = evaluate(proposal);
    double acc_rate = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
      const double log_u = std::log(rngs[c].uniform());
      const double diff = lp_new[c] - logp[c];
      const bool accept = std::isfinite(lp_new[c]) && (!std::isfinite(logp[c]) || log_u < diff);
      if (accept) {
        z[c] = proposal[c];
        logp[c] = lp_new[c];
      }
      acc_rate += std::isfinite(diff) ? std::min(1.0, std::exp(std::min(diff, 0.0))) : (accept ? 1.0 : 0.0);
      if (warm) {
        warm_accepted[c] += accept;
      } else {
        accepted[c] += accept;
        const std::size_t k = it - s.warmup;
        if (k % s.thin == 0 && k / s.thin < kept) {
          const auto th = prior.from_unconstrained(z[c]);
          for (std::size_t d = 0; d < dim; ++d) per_chain[d][c].push_back(th[d]);
        }
      }
    }
    if (warm) {
      acc_rate /= static_cast<double>(c_count);
      log_step += (acc_rate - s.target_acceptance) / std::sqrt(static_cast<double>(it) + 10.0);
      // Diagonal scales come from the second quarter of warm-up; the step
      // keeps adapting to the target acceptance until warm-up ends.
      if (it >= s.warmup / 4 && it < s.warmup / 2) {
        for (std::size_t c = 0; c < c_count; ++c) {
          ++run_n;
          for (std::size_t d = 0; d < dim; ++d) {
            const double delta = z[c][d] - run_mean[d];
            run_mean[d] += delta / static_cast<double>(run_n);
            run_m2[d] += delta * (z[c][d] - run_mean[d]);
          }
        }
        if (it + 1 == s.warmup / 2 && run_n > 10) {
          for (std::size_t d = 0; d < dim; ++d) {
            scale[d] = std::sqrt(std::max(run_m2[d] / static_cast<double>(run_n - 1), 1e-12));
          }
          log_step = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
        }
      }
    }
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    if (accepted[c] == 0) {
      throw InferenceError("MCMC chain " + std::to_string(c) + " rejected every proposal; the step size is pathological");
    }
    out.acceptance.push_back(static_cast<double>(accepted[c]) / static_cast<double>(s.draws));
  }
  const std::size_t per = per_chain[0][0].size();
  out.samples = grad::Tensor(c_count * per, dim);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t d = 0; d < dim; ++d) out.samples(c * per + i, d) = per_chain[d][c][i];
      out.chain.push_back(static_cast<std::uint32_t>(c));
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    out.rhat.push_back(split_rhat(per_chain[d]));
    out.ess.push_back(effective_sample_size(per_chain[d]));
    if (out.rhat.back() > 1.1) out.rhat_flag = true;
  }
  if (out.rhat_flag) spdlog::warn("MCMC split R-hat above 1.1; inspect the chains before trusting the posterior");
  return out;
}

grad::Tensor resample_rows(const grad::Tensor& samples, std::size_t count, std::uint64_t seed, std::uint64_t step) {
  if (samples.rows() == 0) throw std::invalid_argument("cannot resample an empty sample set");
  grad::Tensor out(count, samples.cols());
  for (std::size_t r = 0; r < count; ++r) {
    auto rng = sim::make_stream(seed, sim::StreamId::Pool, step, r);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(rng.uniform() * static_cast<double>(samples.rows())),
                                         samples.rows() - 1);
    std::copy_n(samples.row_span(k).begin(), samples.cols(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace infodesign::inference
