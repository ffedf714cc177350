#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <stdexcept>
#include <vector>

#include "infodesign/grad/tensor.hpp"

namespace infodesign::designopt {

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 0.0;  // global-norm threshold; 0 disables clipping
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam over one parameter group with optional global-norm clipping.
class Adam {
 public:
  Adam(AdamSettings settings, const std::vector<grad::Tensor>& shapes);

  const AdamSettings& settings() const noexcept { return settings_; }
  double lr() const noexcept { return settings_.lr; }
  void set_lr(double lr) noexcept { settings_.lr = lr; }
  std::size_t steps() const noexcept { return t_; }
  void reset();

  // Clips, updates the moments and applies the step in place. Returns the
  // gradient norm before clipping.
  double step(std::span<grad::Tensor* const> params, std::span<const grad::Tensor> grads);

 private:
  AdamSettings settings_;
  std::vector<grad::Tensor> m_;
  std::vector<grad::Tensor> v_;
  std::size_t t_ = 0;
};

double global_norm(std::span<const grad::Tensor> grads);
// Scales every gradient by min(1, threshold / global norm); threshold 0 is a
// no-op. Returns the norm before scaling.
double clip_global_norm(std::span<grad::Tensor> grads, double threshold);

// Multiplies the learning rate by `factor` when the running mean of the last
// `smoothing` losses has not improved for `patience` steps.
class PlateauSchedule {
 public:
  PlateauSchedule(std::size_t patience, std::size_t smoothing, double factor, double floor);

  // Returns the learning rate to use after observing `loss`.
  double observe(double loss, double lr);
  std::size_t reductions() const noexcept { return reductions_; }

 private:
  std::size_t patience_;
  std::size_t smoothing_;
  double factor_;
  double floor_;
  std::deque<double> window_;
  double window_sum_ = 0.0;
  double best_;
  std::size_t bad_steps_ = 0;
  std::size_t reductions_ = 0;
};

}  // namespace infodesign::designopt
