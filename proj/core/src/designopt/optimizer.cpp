#include "infodesign/designopt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace infodesign::designopt {

Adam::Adam(AdamSettings settings, const std::vector<grad::Tensor>& shapes) : settings_(settings) {
  if (!(settings_.lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (!(settings_.beta1 >= 0.0 && settings_.beta1 < 1.0) || !(settings_.beta2 >= 0.0 && settings_.beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(settings_.clip >= 0.0)) throw std::invalid_argument("clip threshold must be non-negative");
  for (const auto& s : shapes) {
    m_.emplace_back(s.rows(), s.cols());
    v_.emplace_back(s.rows(), s.cols());
  }
}

void Adam::reset() {
  for (auto& m : m_) std::fill(m.data().begin(), m.data().end(), 0.0);
  for (auto& v : v_) std::fill(v.data().begin(), v.data().end(), 0.0);
  t_ = 0;
}

double global_norm(std::span<const grad::Tensor> grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g.data()) s += x * x;
  }
  return std::sqrt(s);
}

double clip_global_norm(std::span<grad::Tensor> grads, double threshold) {
  const double norm = global_norm(grads);
  if (threshold > 0.0 && norm > threshold) {
    const double factor = threshold / norm;
    for (auto& g : grads) {
      for (double& x : g.data()) x *= factor;
    }
  }
  return norm;
}

double Adam::step(std::span<grad::Tensor* const> params, std::span<const grad::Tensor> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw OptimizerError("parameter group size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(m_[i]) || !params[i]->same_shape(m_[i])) throw OptimizerError("gradient shape mismatch");
    if (!grads[i].all_finite()) throw OptimizerError("non-finite gradient in parameter " + std::to_string(i));
  }
  const double norm = global_norm(grads);
  const double factor = (settings_.clip > 0.0 && norm > settings_.clip) ? settings_.clip / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto p = params[i]->data();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gk = g[k] * factor;
      m[k] = settings_.beta1 * m[k] + (1.0 - settings_.beta1) * gk;
      v[k] = settings_.beta2 * v[k] + (1.0 - settings_.beta2) * gk * gk;
      p[k] -= settings_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + settings_.eps);
    }
  }
  return norm;
}

PlateauSchedule::PlateauSchedule(std::size_t patience, std::size_t smoothing, double factor, double floor)
    : patience_(patience),
      smoothing_(std::max<std::size_t>(smoothing, 1)),
      factor_(factor),
      floor_(floor),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor <= 1.0)) throw std::invalid_argument("plateau factor must lie in (0, 1]");
}

double PlateauSchedule::observe(double loss, double lr) {
  window_.push_back(loss);
  window_sum_ += loss;
  if (window_.size() > smoothing_) {
    window_sum_ -= window_.front();
    window_.pop_front();
  }
  if (factor_ == 1.0 || window_.size() < smoothing_) return lr;
  const double smoothed = window_sum_ / static_cast<double>(window_.size());
  if (std::isinf(best_) || smoothed < best_ - 1e-4 * std::abs(best_)) {
    best_ = smoothed;
    bad_steps_ = 0;
    return lr;
  }
  if (++bad_steps_ <= patience_) return lr;
  bad_steps_ = 0;
  const double next = lr <= floor_ ? lr : std::max(lr * factor_, floor_);
  if (next < lr) ++reductions_;
  return next;
}

}  // namespace infodesign::designopt
