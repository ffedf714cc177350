#include "infodesign/flow/conditional_flow.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "infodesign/grad/ops.hpp"
#include "infodesign/sim/rng.hpp"

namespace infodesign::flow {
namespace {

bool is_identity_map(const std::vector<std::uint32_t>& rows, std::size_t count) {
  if (rows.size() != count) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] != i) return false;
  }
  return true;
}

grad::Var gather_if_needed(grad::Var x, const std::vector<std::uint32_t>& rows) {
  if (is_identity_map(rows, x.rows())) return x;
  return grad::gather_rows(x, rows);
}

void check_size(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() != n) {
    throw std::invalid_argument(std::string("flow config: ") + name + " must have " + std::to_string(n) + " entries");
  }
}

}  // namespace

void FlowConfig::fill_defaults() {
  if (y_shift.empty()) y_shift.assign(y_dim, 0.0);
  if (y_scale.empty()) y_scale.assign(y_dim, 1.0);
  if (theta_shift.empty()) theta_shift.assign(theta_dim, 0.0);
  if (theta_scale.empty()) theta_scale.assign(theta_dim, 1.0);
  if (xi_lower.empty()) xi_lower.assign(xi_dim, -1.0);
  if (xi_upper.empty()) xi_upper.assign(xi_dim, 1.0);
}

void FlowConfig::validate() const {
  if (y_dim == 0) throw std::invalid_argument("flow config: y_dim must be positive");
  if (theta_dim == 0) throw std::invalid_argument("flow config: theta_dim must be positive");
  if (bijectors == 0) throw std::invalid_argument("flow config: at least one bijector is required");
  if (hidden_layers == 0 || hidden_units == 0) throw std::invalid_argument("flow config: empty conditioner");
  spline.validate();
  check_size(y_shift, y_dim, "y_shift");
  check_size(y_scale, y_dim, "y_scale");
  check_size(theta_shift, theta_dim, "theta_shift");
  check_size(theta_scale, theta_dim, "theta_scale");
  check_size(xi_lower, xi_dim, "xi_lower");
  check_size(xi_upper, xi_dim, "xi_upper");
  for (double s : y_scale) {
    if (!(s > 0.0)) throw std::invalid_argument("flow config: y_scale must be positive");
  }
  for (double s : theta_scale) {
    if (!(s > 0.0)) throw std::invalid_argument("flow config: theta_scale must be positive");
  }
  for (std::size_t i = 0; i < xi_dim; ++i) {
    if (!(xi_upper[i] > xi_lower[i])) throw std::invalid_argument("flow config: design bounds must satisfy lower < upper");
  }
}

void to_json(nlohmann::json& j, const FlowConfig& c) {
  j = nlohmann::json{{"y_dim", c.y_dim},
                     {"theta_dim", c.theta_dim},
                     {"xi_dim", c.xi_dim},
                     {"bijectors", c.bijectors},
                     {"hidden_layers", c.hidden_layers},
                     {"hidden_units", c.hidden_units},
                     {"bins", c.spline.bins},
                     {"tail_bound", c.spline.tail_bound},
                     {"min_bin_width", c.spline.min_bin_width},
                     {"min_bin_height", c.spline.min_bin_height},
                     {"min_derivative", c.spline.min_derivative},
                     {"seed", c.seed},
                     {"y_shift", c.y_shift},
                     {"y_scale", c.y_scale},
                     {"theta_shift", c.theta_shift},
                     {"theta_scale", c.theta_scale},
                     {"xi_lower", c.xi_lower},
                     {"xi_upper", c.xi_upper}};
}

void from_json(const nlohmann::json& j, FlowConfig& c) {
  j.at("y_dim").get_to(c.y_dim);
  j.at("theta_dim").get_to(c.theta_dim);
  j.at("xi_dim").get_to(c.xi_dim);
  j.at("bijectors").get_to(c.bijectors);
  j.at("hidden_layers").get_to(c.hidden_layers);
  j.at("hidden_units").get_to(c.hidden_units);
  j.at("bins").get_to(c.spline.bins);
  j.at("tail_bound").get_to(c.spline.tail_bound);
  j.at("min_bin_width").get_to(c.spline.min_bin_width);
  j.at("min_bin_height").get_to(c.spline.min_bin_height);
  j.at("min_derivative").get_to(c.spline.min_derivative);
  j.at("seed").get_to(c.seed);
  j.at("y_shift").get_to(c.y_shift);
  j.at("y_scale").get_to(c.y_scale);
  j.at("theta_shift").get_to(c.theta_shift);
  j.at("theta_scale").get_to(c.theta_scale);
  j.at("xi_lower").get_to(c.xi_lower);
  j.at("xi_upper").get_to(c.xi_upper);
}

std::size_t expected_parameter_count(const FlowConfig& c) {
  const std::size_t h = c.hidden_units;
  std::size_t total = 0;
  for (std::size_t b = 0; b < c.bijectors; ++b) {
    std::size_t in = c.context_dim();
    std::size_t transformed = c.y_dim;
    if (c.coupling()) {
      const std::size_t half = c.y_dim / 2;
      in += half;
      transformed = c.y_dim - half;
    }
    const std::size_t out = transformed * static_cast<std::size_t>(c.spline.raw_size());
    total += in * h + h;
    total += (c.hidden_layers - 1) * (h * h + h);
    total += h * out + out;
  }
  return total;
}

FlowInputs aligned_inputs(grad::Var y, grad::Var theta, grad::Var xi) {
  FlowInputs in;
  in.y = y;
  in.theta = theta;
  in.xi = xi;
  const std::size_t n = y.rows();
  in.y_row.resize(n);
  in.theta_row.resize(n);
  in.xi_row.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.y_row[i] = static_cast<std::uint32_t>(i);
    in.theta_row[i] = static_cast<std::uint32_t>(theta.rows() == 1 ? 0 : i);
    in.xi_row[i] = static_cast<std::uint32_t>(!xi.valid() || xi.rows() == 1 ? 0 : i);
  }
  return in;
}

FlowEvaluationError::FlowEvaluationError(std::size_t bijector, const std::string& what)
    : std::runtime_error("bijector " + std::to_string(bijector) + ": " + what), bijector_(bijector) {}

ConditionalFlow::ConditionalFlow(FlowConfig config) : config_(std::move(config)) {
  config_.fill_defaults();
  config_.validate();
  const std::size_t h = config_.hidden_units;
  const std::size_t in = conditioner_input_dim();
  for (std::size_t b = 0; b < config_.bijectors; ++b) {
    bijector_offsets_.push_back(params_.size());
    const std::size_t out = conditioner_output_dim(b);
    std::size_t fan_in = in;
    for (std::size_t l = 0; l <= config_.hidden_layers; ++l) {
      const bool last = l == config_.hidden_layers;
      const std::size_t fan_out = last ? out : h;
      grad::Tensor w(fan_in, fan_out);
      if (!last) {
        auto rng = sim::make_stream(config_.seed, sim::StreamId::FlowInit, b, l);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : w.data()) v = limit * (2.0 * rng.uniform() - 1.0);
      }
      params_.push_back(std::move(w));
      params_.emplace_back(1, fan_out);
      fan_in = fan_out;
    }
  }
}

std::size_t ConditionalFlow::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::vector<double> ConditionalFlow::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& p : params_) flat.insert(flat.end(), p.data().begin(), p.data().end());
  return flat;
}

void ConditionalFlow::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("expected " + std::to_string(parameter_count()) + " flow parameters, got " +
                                std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto& p : params_) {
    for (double& v : p.data()) v = flat[offset++];
  }
}

ConditionalFlow::Bound ConditionalFlow::bind(grad::Tape& tape, bool trainable) const {
  Bound bound;
  bound.params.reserve(params_.size());
  for (const auto& p : params_) bound.params.push_back(trainable ? tape.parameter(p) : tape.constant(p));
  return bound;
}

ConditionalFlow::Split ConditionalFlow::split_for(std::size_t bijector) const {
  const std::size_t d = config_.y_dim;
  if (!config_.coupling()) return {0, 0, 0, 1};
  const std::size_t half = d / 2;
  if (bijector % 2 == 0) return {0, half, half, d - half};
  return {d - half, half, 0, d - half};
}

std::size_t ConditionalFlow::conditioner_input_dim() const {
  return config_.context_dim() + (config_.coupling() ? config_.y_dim / 2 : 0);
}

std::size_t ConditionalFlow::conditioner_output_dim(std::size_t bijector) const {
  return split_for(bijector).transformed_count * static_cast<std::size_t>(config_.spline.raw_size());
}

grad::Var ConditionalFlow::conditioner(const Bound& bound, std::size_t bijector, grad::Var input) const {
  std::size_t p = bijector_offsets_[bijector];
  grad::Var h = input;
  for (std::size_t l = 0; l < config_.hidden_layers; ++l) {
    h = grad::tanh(grad::add(grad::matmul(h, bound.params[p]), bound.params[p + 1]));
    p += 2;
  }
  return grad::add(grad::matmul(h, bound.params[p]), bound.params[p + 1]);
}

grad::Var ConditionalFlow::standardized_context(const FlowInputs& inputs,
                                                std::vector<std::uint32_t>* pair_to_context) const {
  const std::size_t pairs = inputs.pairs();
  std::vector<std::uint32_t> theta_rows;
  std::vector<std::uint32_t> xi_rows;
  if (pair_to_context) {
    std::unordered_map<std::uint64_t, std::uint32_t> seen;
    seen.reserve(pairs);
    pair_to_context->resize(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
      const std::uint32_t xr = config_.xi_dim > 0 ? inputs.xi_row[p] : 0;
      const std::uint64_t key = (static_cast<std::uint64_t>(inputs.theta_row[p]) << 32) | xr;
      auto [it, inserted] = seen.try_emplace(key, static_cast<std::uint32_t>(theta_rows.size()));
      if (inserted) {
        theta_rows.push_back(inputs.theta_row[p]);
        xi_rows.push_back(xr);
      }
      (*pair_to_context)[p] = it->second;
    }
  } else {
    theta_rows = inputs.theta_row;
    if (config_.xi_dim > 0) xi_rows = inputs.xi_row;
  }

  std::vector<double> ts(config_.theta_dim);
  std::vector<double> tb(config_.theta_dim);
  for (std::size_t i = 0; i < config_.theta_dim; ++i) {
    ts[i] = 1.0 / config_.theta_scale[i];
    tb[i] = -config_.theta_shift[i] / config_.theta_scale[i];
  }
  grad::Var theta = grad::affine_cols(inputs.theta, ts, tb);
  grad::Var ctx = gather_if_needed(theta, theta_rows);
  if (config_.xi_dim > 0) {
    std::vector<double> xs(config_.xi_dim);
    std::vector<double> xb(config_.xi_dim);
    for (std::size_t i = 0; i < config_.xi_dim; ++i) {
      const double width = config_.xi_upper[i] - config_.xi_lower[i];
      xs[i] = 2.0 / width;
      xb[i] = -(config_.xi_upper[i] + config_.xi_lower[i]) / width;
    }
    grad::Var xi = grad::affine_cols(inputs.xi, xs, xb);
    ctx = grad::concat_cols(ctx, gather_if_needed(xi, xi_rows));
  }
  return ctx;
}

ConditionalFlow::Evaluated ConditionalFlow::run_forward(const Bound& bound, const FlowInputs& inputs) const {
  if (inputs.y.cols() != config_.y_dim || inputs.theta.cols() != config_.theta_dim ||
      (config_.xi_dim > 0 && (!inputs.xi.valid() || inputs.xi.cols() != config_.xi_dim))) {
    throw grad::ShapeError("flow inputs do not match the configured dimensions");
  }
  const std::size_t d = config_.y_dim;
  std::vector<double> ys(d);
  std::vector<double> yb(d);
  double log_scale = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    ys[i] = 1.0 / config_.y_scale[i];
    yb[i] = -config_.y_shift[i] / config_.y_scale[i];
    log_scale += std::log(config_.y_scale[i]);
  }
  grad::Var z = gather_if_needed(grad::affine_cols(inputs.y, ys, yb), inputs.y_row);
  grad::Var log_det;
  auto accumulate = [&](grad::Var ld) { log_det = log_det.valid() ? grad::add(log_det, ld) : ld; };

  if (!config_.coupling()) {
    std::vector<std::uint32_t> to_context;
    grad::Var ctx = standardized_context(inputs, &to_context);
    for (std::size_t b = 0; b < config_.bijectors; ++b) {
      try {
        grad::Var raw = gather_if_needed(conditioner(bound, b, ctx), to_context);
        grad::Var out = rq_spline(z, raw, config_.spline, SplineDirection::Forward);
        z = grad::slice_cols(out, 0, 1);
        accumulate(grad::slice_cols(out, 1, 1));
      } catch (const grad::NonFiniteError& e) {
        throw FlowEvaluationError(b, e.what());
      }
    }
  } else {
    grad::Var ctx = standardized_context(inputs, nullptr);
    for (std::size_t b = 0; b < config_.bijectors; ++b) {
      try {
        const Split s = split_for(b);
        grad::Var z_id = grad::slice_cols(z, s.identity_begin, s.identity_count);
        grad::Var z_tr = grad::slice_cols(z, s.transformed_begin, s.transformed_count);
        grad::Var raw = conditioner(bound, b, grad::concat_cols(ctx, z_id));
        grad::Var out = rq_spline(z_tr, raw, config_.spline, SplineDirection::Forward);
        grad::Var moved = grad::slice_cols(out, 0, s.transformed_count);
        accumulate(grad::row_sum(grad::slice_cols(out, s.transformed_count, s.transformed_count)));
        z = s.identity_begin == 0 ? grad::concat_cols(z_id, moved) : grad::concat_cols(moved, z_id);
      } catch (const grad::NonFiniteError& e) {
        throw FlowEvaluationError(b, e.what());
      }
    }
  }
  return {z, grad::add_scalar(log_det, -log_scale)};
}

grad::Var ConditionalFlow::to_base(const Bound& bound, const FlowInputs& inputs) const {
  return run_forward(bound, inputs).u;
}

grad::Var ConditionalFlow::log_prob(const Bound& bound, const FlowInputs& inputs) const {
  const Evaluated e = run_forward(bound, inputs);
  const double norm = -0.5 * static_cast<double>(config_.y_dim) * std::log(2.0 * std::numbers::pi);
  grad::Var base = grad::add_scalar(grad::scale(grad::row_sum(grad::square(e.u)), -0.5), norm);
  return grad::add(base, e.log_det);
}

grad::Var ConditionalFlow::from_base(const Bound& bound, const FlowInputs& inputs) const {
  if (inputs.y.cols() != config_.y_dim || inputs.theta.cols() != config_.theta_dim ||
      (config_.xi_dim > 0 && (!inputs.xi.valid() || inputs.xi.cols() != config_.xi_dim))) {
    throw grad::ShapeError("flow inputs do not match the configured dimensions");
  }
  grad::Var z = gather_if_needed(inputs.y, inputs.y_row);
  if (!config_.coupling()) {
    std::vector<std::uint32_t> to_context;
    grad::Var ctx = standardized_context(inputs, &to_context);
    for (std::size_t b = config_.bijectors; b-- > 0;) {
      try {
        grad::Var raw = gather_if_needed(conditioner(bound, b, ctx), to_context);
        z = grad::slice_cols(rq_spline(z, raw, config_.spline, SplineDirection::Inverse), 0, 1);
      } catch (const grad::NonFiniteError& e) {
        throw FlowEvaluationError(b, e.what());
      }
    }
  } else {
    grad::Var ctx = standardized_context(inputs, nullptr);
    for (std::size_t b = config_.bijectors; b-- > 0;) {
      try {
        const Split s = split_for(b);
        grad::Var z_id = grad::slice_cols(z, s.identity_begin, s.identity_count);
        grad::Var z_tr = grad::slice_cols(z, s.transformed_begin, s.transformed_count);
        grad::Var raw = conditioner(bound, b, grad::concat_cols(ctx, z_id));
        grad::Var moved = grad::slice_cols(rq_spline(z_tr, raw, config_.spline, SplineDirection::Inverse), 0,
                                           s.transformed_count);
        z = s.identity_begin == 0 ? grad::concat_cols(z_id, moved) : grad::concat_cols(moved, z_id);
      } catch (const grad::NonFiniteError& e) {
        throw FlowEvaluationError(b, e.what());
      }
    }
  }
  return grad::affine_cols(z, config_.y_scale, config_.y_shift);
}

namespace {

struct SingleRow {
  grad::Tape tape;
  FlowInputs inputs;
};

void bind_single(SingleRow& s, const FlowConfig& c, std::span<const double> y, std::span<const double> theta,
                 std::span<const double> xi) {
  if (y.size() != c.y_dim || theta.size() != c.theta_dim || xi.size() != c.xi_dim) {
    throw grad::ShapeError("flow query dimensions do not match the configuration");
  }
  grad::Var yv = s.tape.constant(grad::Tensor::row(y));
  grad::Var tv = s.tape.constant(grad::Tensor::row(theta));
  grad::Var xv;
  if (c.xi_dim > 0) xv = s.tape.constant(grad::Tensor::row(xi));
  s.inputs = aligned_inputs(yv, tv, xv);
}

}  // namespace

double ConditionalFlow::log_prob(std::span<const double> y, std::span<const double> theta,
                                 std::span<const double> xi) const {
  SingleRow s;
  bind_single(s, config_, y, theta, xi);
  return log_prob(bind(s.tape, false), s.inputs).value().item();
}

std::vector<double> ConditionalFlow::to_base(std::span<const double> y, std::span<const double> theta,
                                             std::span<const double> xi) const {
  SingleRow s;
  bind_single(s, config_, y, theta, xi);
  return to_base(bind(s.tape, false), s.inputs).value().values();
}

std::vector<double> ConditionalFlow::from_base(std::span<const double> u, std::span<const double> theta,
                                               std::span<const double> xi) const {
  SingleRow s;
  bind_single(s, config_, u, theta, xi);
  return from_base(bind(s.tape, false), s.inputs).value().values();
}

std::vector<double> ConditionalFlow::base_draw(std::size_t dim, std::uint64_t seed) {
  auto rng = sim::make_stream(seed, sim::StreamId::Sampling);
  std::vector<double> u(dim);
  for (double& v : u) v = rng.normal();
  return u;
}

std::vector<double> ConditionalFlow::sample(std::span<const double> theta, std::span<const double> xi,
                                            std::uint64_t seed) const {
  const std::vector<double> u = base_draw(config_.y_dim, seed);
  return from_base(u, theta, xi);
}

}  // namespace infodesign::flow
