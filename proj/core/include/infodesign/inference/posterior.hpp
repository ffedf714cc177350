#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "infodesign/flow/conditional_flow.hpp"
#include "infodesign/grad/tensor.hpp"
#include "infodesign/sim/prior.hpp"

namespace infodesign::inference {

struct Observation {
  std::vector<double> xi;
  std::vector<double> y;
};

// Summed log-likelihood of the whole history for each parameter row.
using BatchLogLikelihood = std::function<std::vector<double>(const grad::Tensor& thetas)>;

// log p(theta) + sum_i log p(y_i | theta, xi_i) over a fixed history.
class ProductTarget {
 public:
  // One term per observation; `term(theta_rows, obs, i)` returns a value per
  // row for history entry i.
  using Term = std::function<std::vector<double>(const grad::Tensor& thetas, const Observation& obs, std::size_t i)>;

  ProductTarget(const sim::Prior& prior, std::vector<Observation> history, Term term);

  const sim::Prior& prior() const noexcept { return prior_; }
  const std::vector<Observation>& history() const noexcept { return history_; }
  // -inf outside the prior support.
  std::vector<double> log_density(const grad::Tensor& thetas) const;
  double log_density(std::span<const double> theta) const;

 private:
  const sim::Prior& prior_;
  std::vector<Observation> history_;
  Term term_;
};

// Per-observation term backed by a trained flow; every row is evaluated on
// one tape.
ProductTarget::Term flow_term(const flow::ConditionalFlow& flow);
// Observation i is scored by flows[i]; later entries reuse the last flow.
ProductTarget::Term flow_term(std::vector<const flow::ConditionalFlow*> flows);

struct McmcSettings {
  std::size_t chains = 4;
  std::size_t warmup = 5000;
  std::size_t draws = 20000;  // kept per chain
  std::size_t thin = 1;
  double target_acceptance = 0.3;
  std::uint64_t seed = 0;
};

struct PosteriorSampleSet {
  grad::Tensor samples;             // kept draws, chain-major
  std::vector<std::uint32_t> chain;
  std::vector<double> acceptance;   // per chain, kept phase
  std::vector<double> rhat;         // split R-hat per dimension
  std::vector<double> ess;          // effective sample size per dimension
  std::vector<Observation> history;
  bool rhat_flag = false;           // any R-hat above 1.1

  std::vector<double> mean() const;
  std::vector<double> variance() const;
};

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adaptive random-walk Metropolis in the prior's unconstrained coordinates.
// Chains start from prior draws and advance in lockstep so that each step
// evaluates every chain's proposal in one batch.
PosteriorSampleSet mcmc_posterior(const ProductTarget& target, const McmcSettings& settings);

// Split R-hat and multi-chain effective sample size for one dimension;
// `chains` holds equal-length draws per chain.
double split_rhat(const std::vector<std::vector<double>>& chains);
double effective_sample_size(const std::vector<std::vector<double>>& chains);

// Rows drawn with replacement, stream (seed, Pool, step, row).
grad::Tensor resample_rows(const grad::Tensor& samples, std::size_t count, std::uint64_t seed, std::uint64_t step);

}  // namespace infodesign::inference
