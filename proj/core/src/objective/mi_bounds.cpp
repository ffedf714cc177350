#include "infodesign/objective/mi_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "infodesign/grad/ops.hpp"

namespace infodesign::objective {
namespace {

std::uint32_t xi_row_for(const ContrastiveBatch& b, std::size_t i) {
  return (!b.xi.valid() || b.xi.rows() == 1) ? 0u : static_cast<std::uint32_t>(i);
}

// log p for every (row, candidate) pair as an N x (L + 1) matrix; column 0
// holds the anchor.
grad::Var candidate_log_probs(const LikelihoodModel& model, const ContrastiveBatch& b) {
  b.validate();
  flow::FlowInputs in;
  in.y = b.y;
  in.theta = b.theta;
  in.xi = b.xi;
  const std::size_t n = b.rows();
  const std::size_t width = b.L + 1;
  in.y_row.reserve(n * width);
  in.theta_row.reserve(n * width);
  in.xi_row.reserve(n * width);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t xr = xi_row_for(b, i);
    in.y_row.push_back(static_cast<std::uint32_t>(i));
    in.theta_row.push_back(b.anchor[i]);
    in.xi_row.push_back(xr);
    for (std::size_t l = 0; l < b.L; ++l) {
      in.y_row.push_back(static_cast<std::uint32_t>(i));
      in.theta_row.push_back(b.contrast[i * b.L + l]);
      in.xi_row.push_back(xr);
    }
  }
  return grad::reshape(model.log_prob(in), n, width);
}

MIEstimate finish(grad::Var rows, grad::Var anchor, const ContrastiveBatch& b, double lambda) {
  MIEstimate e;
  e.rows = rows;
  e.objective = grad::mean(rows);
  e.value = e.objective.value().item();
  e.per_row = rows.value().values();
  e.bound_cap = std::log(static_cast<double>(b.L + 1));
  e.lambda = lambda;
  e.anchor_rows = anchor.value().values();
  double acc = 0.0;
  for (double v : e.anchor_rows) acc += v;
  e.anchor_mean = acc / static_cast<double>(b.rows());
  if (e.per_row.size() > 1) {
    double ss = 0.0;
    for (double v : e.per_row) ss += (v - e.value) * (v - e.value);
    e.se = std::sqrt(ss / static_cast<double>(e.per_row.size() - 1) / static_cast<double>(e.per_row.size()));
  }
  return e;
}

grad::Var lambda_term(grad::Var anchor, double lambda, bool leaf, grad::Var& leaf_out) {
  if (leaf) {
    leaf_out = anchor.tape()->parameter(grad::Tensor::scalar(lambda));
    return grad::mul(anchor, leaf_out);
  }
  return grad::scale(anchor, lambda);
}

}  // namespace

void ContrastiveBatch::validate() const {
  if (!y.valid() || !theta.valid()) throw std::invalid_argument("contrastive batch needs y and theta");
  const std::size_t n = rows();
  if (n == 0) throw std::invalid_argument("contrastive batch is empty");
  if (y.rows() != n) throw grad::ShapeError("contrastive batch: y rows do not match anchors");
  if (contrast.size() != n * L) throw grad::ShapeError("contrastive batch: contrast table has the wrong size");
  if (xi.valid() && xi.rows() != 1 && xi.rows() != n) throw grad::ShapeError("contrastive batch: xi rows");
  if (!(lambda >= -1.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= -1");
  const std::size_t t = theta.rows();
  for (auto a : anchor) {
    if (a >= t) throw std::out_of_range("anchor index outside the parameter table");
  }
  for (auto c : contrast) {
    if (c >= t) throw std::out_of_range("contrast index outside the parameter table");
  }
}

ContrastiveBatch shared_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, std::size_t L, double lambda) {
  const std::size_t n = y.rows();
  if (theta.rows() != n + L) throw grad::ShapeError("shared batch needs N + L parameter rows");
  ContrastiveBatch b{y, theta, xi, {}, {}, L, lambda};
  for (std::size_t i = 0; i < n; ++i) {
    b.anchor.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t l = 0; l < L; ++l) b.contrast.push_back(static_cast<std::uint32_t>(n + l));
  }
  return b;
}

ContrastiveBatch per_row_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, std::size_t L,
                                           double lambda) {
  const std::size_t n = y.rows();
  if (theta.rows() != n + n * L) throw grad::ShapeError("per-row batch needs N + N * L parameter rows");
  ContrastiveBatch b{y, theta, xi, {}, {}, L, lambda};
  for (std::size_t i = 0; i < n; ++i) {
    b.anchor.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t l = 0; l < L; ++l) b.contrast.push_back(static_cast<std::uint32_t>(n + i * L + l));
  }
  return b;
}

ContrastiveBatch in_batch_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, double lambda) {
  const std::size_t n = y.rows();
  if (theta.rows() != n) throw grad::ShapeError("in-batch contrast needs one parameter row per outcome");
  if (n < 2) throw std::invalid_argument("in-batch contrast needs at least two rows");
  ContrastiveBatch b{y, theta, xi, {}, {}, n - 1, lambda};
  for (std::size_t i = 0; i < n; ++i) {
    b.anchor.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) b.contrast.push_back(static_cast<std::uint32_t>(j));
    }
  }
  return b;
}

MIEstimate nce_loss(const LikelihoodModel& model, const ContrastiveBatch& batch) {
  grad::Var lp = candidate_log_probs(model, batch);
  grad::Var anchor = grad::slice_cols(lp, 0, 1);
  grad::Var rows = grad::add_scalar(grad::sub(anchor, grad::logsumexp_rows(lp)),
                                    std::log(static_cast<double>(batch.L + 1)));
  return finish(rows, anchor, batch, 0.0);
}

MIEstimate nce_lambda_loss(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options) {
  grad::Var lp = candidate_log_probs(model, batch);
  grad::Var anchor = grad::slice_cols(lp, 0, 1);
  grad::Var rows = grad::add_scalar(grad::sub(anchor, grad::logsumexp_rows(lp)),
                                    std::log(static_cast<double>(batch.L + 1)));
  grad::Var leaf;
  if (batch.lambda != 0.0 || options.lambda_leaf) {
    rows = grad::add(rows, lambda_term(anchor, batch.lambda, options.lambda_leaf, leaf));
  }
  MIEstimate e = finish(rows, anchor, batch, batch.lambda);
  e.lambda_leaf = leaf;
  return e;
}

MIEstimate info_nce_lambda(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options) {
  grad::Var lp = candidate_log_probs(model, batch);
  grad::Var anchor = grad::slice_cols(lp, 0, 1);
  grad::Var leaf;
  grad::Var scaled = options.lambda_leaf ? grad::add(anchor, lambda_term(anchor, batch.lambda, true, leaf))
                                         : grad::scale(anchor, 1.0 + batch.lambda);
  grad::Var rows = grad::add_scalar(grad::sub(scaled, grad::logsumexp_rows(lp)),
                                    std::log(static_cast<double>(batch.L + 1)));
  MIEstimate e = finish(rows, anchor, batch, batch.lambda);
  e.lambda_leaf = leaf;
  return e;
}

MIEstimate cre_loss(const LikelihoodModel& model, const ContrastiveBatch& batch) {
  if (batch.L == 0) throw std::invalid_argument("contrastive-ratio form needs L >= 1");
  grad::Var lp = candidate_log_probs(model, batch);
  grad::Var anchor = grad::slice_cols(lp, 0, 1);
  grad::Var denom = grad::logsumexp_rows(grad::slice_cols(lp, 1, batch.L));
  grad::Var rows = grad::add_scalar(grad::sub(anchor, denom), std::log(static_cast<double>(batch.L)));
  return finish(rows, anchor, batch, 0.0);
}

DesignEIG eig_per_design(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options) {
  DesignEIG out;
  out.estimate = info_nce_lambda(model, batch, options);
  std::map<std::uint32_t, std::pair<double, std::size_t>> groups;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto& g = groups[xi_row_for(batch, i)];
    g.first += out.estimate.per_row[i];
    ++g.second;
  }
  for (const auto& [row, g] : groups) {
    out.design_rows.push_back(row);
    out.per_design.push_back(g.first / static_cast<double>(g.second));
  }
  return out;
}

NWJEstimate nwj_bound(const Critic& critic, const JointSamples& s, std::size_t shuffles) {
  const std::size_t n = s.y.rows();
  if (n < 2) throw std::invalid_argument("NWJ bound needs at least two joint samples");
  if (s.theta.rows() != n) throw grad::ShapeError("NWJ samples: theta rows do not match y");
  if (shuffles == 0 || shuffles >= n) throw std::invalid_argument("NWJ shuffles must be in [1, N - 1]");
  auto xi_of = [&](std::size_t i) -> std::span<const double> {
    if (s.xi.empty()) return {};
    return s.xi.row_span(s.xi.rows() == 1 ? 0 : i);
  };
  NWJEstimate e;
  std::vector<double> joint(n);
  for (std::size_t i = 0; i < n; ++i) joint[i] = critic(s.y.row_span(i), s.theta.row_span(i), xi_of(i));
  // Per-row contributions so the standard error reflects both terms.
  std::vector<double> contrib(n);
  double marginal_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_exp = 0.0;
    for (std::size_t k = 1; k <= shuffles; ++k) {
      const double g = critic(s.y.row_span(i), s.theta.row_span((i + k) % n), xi_of(i));
      const double eg = std::exp(g);
      if (!std::isfinite(eg)) {
        throw std::overflow_error("NWJ critic value " + std::to_string(g) + " overflows exp at row " +
                                  std::to_string(i));
      }
      row_exp += eg;
    }
    row_exp /= static_cast<double>(shuffles);
    marginal_total += row_exp;
    contrib[i] = joint[i] - std::exp(-1.0) * row_exp;
  }
  double jm = 0.0;
  for (double v : joint) jm += v;
  e.joint_mean = jm / static_cast<double>(n);
  e.marginal_mean = marginal_total / static_cast<double>(n);
  e.value = e.joint_mean - std::exp(-1.0) * e.marginal_mean;
  double ss = 0.0;
  for (double v : contrib) ss += (v - e.value) * (v - e.value);
  e.se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  return e;
}

LogLikEstimate validation_loglik(const flow::ConditionalFlow& flow, const JointSamples& held_out) {
  const std::size_t n = held_out.y.rows();
  if (n == 0) throw std::invalid_argument("validation set is empty");
  grad::Tape tape;
  grad::Var y = tape.constant(held_out.y);
  grad::Var theta = tape.constant(held_out.theta);
  grad::Var xi;
  if (!held_out.xi.empty()) xi = tape.constant(held_out.xi);
  const grad::Tensor lp = flow.log_prob(flow.bind(tape, false), flow::aligned_inputs(y, theta, xi)).value();
  LogLikEstimate e;
  for (double v : lp.data()) e.mean += v;
  e.mean /= static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : lp.data()) ss += (v - e.mean) * (v - e.mean);
    e.se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return e;
}

MIEstimate heldout_info_nce(const flow::ConditionalFlow& flow, const JointSamples& held_out,
                            const grad::Tensor& contrastive, double lambda) {
  const std::size_t n = held_out.y.rows();
  if (n == 0) throw std::invalid_argument("validation set is empty");
  if (held_out.theta.rows() != n || contrastive.cols() != held_out.theta.cols()) {
    throw std::invalid_argument("held-out parameters do not match the outcomes");
  }
  grad::Tensor theta(n + contrastive.rows(), held_out.theta.cols());
  std::copy(held_out.theta.data().begin(), held_out.theta.data().end(), theta.data().begin());
  std::copy(contrastive.data().begin(), contrastive.data().end(), theta.data().begin() + held_out.theta.size());
  grad::Tape tape;
  grad::Var xi;
  if (!held_out.xi.empty()) xi = tape.constant(held_out.xi);
  FlowLikelihood model(flow, flow.bind(tape, false));
  const auto batch =
      shared_contrastive_batch(tape.constant(held_out.y), tape.constant(theta), xi, contrastive.rows(), lambda);
  return info_nce_lambda(model, batch);
}

grad::Var GaussianLikelihood::log_prob(const flow::FlowInputs& in) const {
  grad::Var y = grad::gather_rows(in.y, in.y_row);
  grad::Var theta = grad::gather_rows(in.theta, in.theta_row);
  grad::Var xi = grad::gather_rows(in.xi, in.xi_row);
  grad::Var r = grad::sub(y, grad::mul(theta, xi));
  const double c = -std::log(sigma_) - 0.5 * std::log(2.0 * std::numbers::pi);
  return grad::add_scalar(grad::scale(grad::square(r), -0.5 / (sigma_ * sigma_)), c);
}

}  // namespace infodesign::objective
