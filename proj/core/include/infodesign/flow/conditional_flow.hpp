#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "infodesign/flow/rq_spline.hpp"
#include "infodesign/grad/tape.hpp"

namespace infodesign::flow {

// Architecture and fixed input standardization of a conditional flow
// p(y | theta, xi). Standardization constants are not trained.
struct FlowConfig {
  std::size_t y_dim = 1;
  std::size_t theta_dim = 1;
  std::size_t xi_dim = 0;
  std::size_t bijectors = 5;
  std::size_t hidden_layers = 2;
  std::size_t hidden_units = 64;
  SplineSettings spline;
  std::uint64_t seed = 0;

  // y_std = (y - y_shift) / y_scale; theta likewise with prior moments.
  std::vector<double> y_shift;
  std::vector<double> y_scale;
  std::vector<double> theta_shift;
  std::vector<double> theta_scale;
  // Designs are mapped linearly from [lower, upper] onto [-1, 1].
  std::vector<double> xi_lower;
  std::vector<double> xi_upper;

  // Fills empty standardization vectors with identity values.
  void fill_defaults();
  void validate() const;
  bool coupling() const noexcept { return y_dim > 1; }
  std::size_t context_dim() const noexcept { return theta_dim + xi_dim; }
};

void to_json(nlohmann::json& j, const FlowConfig& c);
void from_json(const nlohmann::json& j, FlowConfig& c);

// Closed-form count of trainable parameters for a configuration.
std::size_t expected_parameter_count(const FlowConfig& config);

// Index-based batch: pair p evaluates y row y_row[p] under theta row
// theta_row[p] and design row xi_row[p]. Shared rows are evaluated once
// where the architecture allows it.
struct FlowInputs {
  grad::Var y;
  grad::Var theta;
  grad::Var xi;  // unbound when xi_dim == 0
  std::vector<std::uint32_t> y_row;
  std::vector<std::uint32_t> theta_row;
  std::vector<std::uint32_t> xi_row;

  std::size_t pairs() const noexcept { return y_row.size(); }
};

// Builds FlowInputs that pair row i of y, theta and xi (xi may have one row
// that is shared).
FlowInputs aligned_inputs(grad::Var y, grad::Var theta, grad::Var xi);

class FlowEvaluationError : public std::runtime_error {
 public:
  FlowEvaluationError(std::size_t bijector, const std::string& what);
  std::size_t bijector() const noexcept { return bijector_; }

 private:
  std::size_t bijector_;
};

// Conditional neural spline flow. Density direction maps y to base noise u
// through each bijector in order; sampling runs the inverse in reverse.
class ConditionalFlow {
 public:
  explicit ConditionalFlow(FlowConfig config);

  const FlowConfig& config() const noexcept { return config_; }
  std::size_t parameter_count() const noexcept;
  const std::vector<grad::Tensor>& parameters() const noexcept { return params_; }
  std::vector<grad::Tensor>& parameters() noexcept { return params_; }
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  // Parameters placed on a tape, as trainable leaves or constants.
  struct Bound {
    std::vector<grad::Var> params;
  };
  Bound bind(grad::Tape& tape, bool trainable) const;

  // log p(y | theta, xi) for every pair, shape (pairs x 1).
  grad::Var log_prob(const Bound& bound, const FlowInputs& inputs) const;
  // Base noise u = f(y; theta, xi), shape (pairs x y_dim).
  grad::Var to_base(const Bound& bound, const FlowInputs& inputs) const;
  // y = f^{-1}(u; theta, xi); `inputs.y` holds u.
  grad::Var from_base(const Bound& bound, const FlowInputs& inputs) const;

  double log_prob(std::span<const double> y, std::span<const double> theta, std::span<const double> xi) const;
  std::vector<double> to_base(std::span<const double> y, std::span<const double> theta,
                              std::span<const double> xi) const;
  std::vector<double> from_base(std::span<const double> u, std::span<const double> theta,
                                std::span<const double> xi) const;
  // Pathwise sample: u ~ N(0, I) drawn from the seed's sampling stream.
  std::vector<double> sample(std::span<const double> theta, std::span<const double> xi, std::uint64_t seed) const;
  static std::vector<double> base_draw(std::size_t dim, std::uint64_t seed);

 private:
  struct Evaluated {
    grad::Var u;
    grad::Var log_det;  // pairs x 1, includes the standardization term
  };
  Evaluated run_forward(const Bound& bound, const FlowInputs& inputs) const;

  struct Split {
    std::size_t identity_begin;
    std::size_t identity_count;
    std::size_t transformed_begin;
    std::size_t transformed_count;
  };
  Split split_for(std::size_t bijector) const;
  std::size_t conditioner_input_dim() const;
  std::size_t conditioner_output_dim(std::size_t bijector) const;
  grad::Var conditioner(const Bound& bound, std::size_t bijector, grad::Var input) const;
  grad::Var standardized_context(const FlowInputs& inputs, std::vector<std::uint32_t>* pair_to_context) const;

  FlowConfig config_;
  std::vector<grad::Tensor> params_;
  std::vector<std::size_t> bijector_offsets_;  // first parameter index per bijector
};

}  // namespace infodesign::flow
