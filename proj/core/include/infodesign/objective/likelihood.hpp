#pragma once

#include "infodesign/flow/conditional_flow.hpp"

namespace infodesign::objective {

// Anything that evaluates log p(y | theta, xi) for indexed pairs on a tape.
class LikelihoodModel {
 public:
  virtual ~LikelihoodModel() = default;
  virtual grad::Var log_prob(const flow::FlowInputs& inputs) const = 0;
};

class FlowLikelihood final : public LikelihoodModel {
 public:
  FlowLikelihood(const flow::ConditionalFlow& flow, flow::ConditionalFlow::Bound bound)
      : flow_(flow), bound_(std::move(bound)) {}
  grad::Var log_prob(const flow::FlowInputs& inputs) const override { return flow_.log_prob(bound_, inputs); }
  const flow::ConditionalFlow::Bound& bound() const noexcept { return bound_; }

 private:
  const flow::ConditionalFlow& flow_;
  flow::ConditionalFlow::Bound bound_;
};

// Exact likelihood of the linear-Gaussian oracle, y ~ N(theta * xi, sigma^2),
// recorded with ordinary tape ops.
class GaussianLikelihood final : public LikelihoodModel {
 public:
  explicit GaussianLikelihood(double sigma_eps) : sigma_(sigma_eps) {}
  grad::Var log_prob(const flow::FlowInputs& inputs) const override;

 private:
  double sigma_;
};

}  // namespace infodesign::objective
