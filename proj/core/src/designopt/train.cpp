#include "infodesign/designopt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include <spdlog/spdlog.h>

#include "infodesign/designopt/optimizer.hpp"
#include "infodesign/grad/ops.hpp"
#include "infodesign/objective/mi_bounds.hpp"
#include "infodesign/sim/rng.hpp"

namespace infodesign::designopt {
namespace {

std::vector<std::uint32_t> draw_rows(std::size_t count, std::size_t pool_size, std::uint64_t seed, std::uint64_t step) {
  std::vector<std::uint32_t> rows(count);
  for (std::size_t r = 0; r < count; ++r) {
    auto rng = sim::make_stream(seed, sim::StreamId::Contrastive, step, r);
    rows[r] = static_cast<std::uint32_t>(std::min<std::size_t>(
        static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool_size)), pool_size - 1));
  }
  return rows;
}

grad::Tensor gather(const grad::Tensor& table, const std::vector<std::uint32_t>& rows) {
  grad::Tensor out(rows.size(), table.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(table.row_span(rows[r]).begin(), table.cols(), out.row_span(r).begin());
  }
  return out;
}

grad::Tensor head_rows(const grad::Tensor& t, std::size_t n) {
  grad::Tensor out(n, t.cols());
  std::copy_n(t.data().begin(), n * t.cols(), out.data().begin());
  return out;
}

}  // namespace

void TrainSettings::validate() const {
  if (steps == 0) throw std::invalid_argument("steps must be positive");
  if (batch == 0) throw std::invalid_argument("batch size must be positive");
  if (!(lambda >= -1.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= -1");
  if (!(lr_flow >= 0.0) || !(lr_design >= 0.0)) throw std::invalid_argument("learning rates must be non-negative");
  if (!(lr_anneal > 0.0 && lr_anneal <= 1.0)) throw std::invalid_argument("annealing rate must lie in (0, 1]");
  if (!(lr_final >= 0.0)) throw std::invalid_argument("final learning rate must be non-negative");
  if (!(clip >= 0.0)) throw std::invalid_argument("clip threshold must be non-negative");
  if (!(design_beta2 >= 0.0 && design_beta2 < 1.0)) throw std::invalid_argument("design beta2 must lie in [0, 1)");
  if (jobs == 0) throw std::invalid_argument("jobs must be positive");
}

void to_json(nlohmann::json& j, const TrainSettings& s) {
  j = nlohmann::json{{"steps", s.steps},
                     {"batch", s.batch},
                     {"contrastive", s.contrastive},
                     {"lambda", s.lambda},
                     {"lr_flow", s.lr_flow},
                     {"lr_design", s.lr_design},
                     {"lr_anneal", s.lr_anneal},
                     {"lr_final", s.lr_final},
                     {"clip", s.clip},
                     {"design_beta2", s.design_beta2},
                     {"plateau_patience", s.plateau_patience},
                     {"plateau_smoothing", s.plateau_smoothing},
                     {"optimize_design", s.optimize_design},
                     {"per_row_contrastive", s.per_row_contrastive}};
}

void from_json(const nlohmann::json& j, TrainSettings& s) {
  s.steps = j.value("steps", s.steps);
  s.batch = j.value("batch", s.batch);
  s.contrastive = j.value("contrastive", s.contrastive);
  s.lambda = j.value("lambda", s.lambda);
  s.lr_flow = j.value("lr_flow", s.lr_flow);
  s.lr_design = j.value("lr_design", s.lr_design);
  s.lr_anneal = j.value("lr_anneal", s.lr_anneal);
  s.lr_final = j.value("lr_final", s.lr_final);
  s.clip = j.value("clip", s.clip);
  s.design_beta2 = j.value("design_beta2", s.design_beta2);
  s.plateau_patience = j.value("plateau_patience", s.plateau_patience);
  s.plateau_smoothing = j.value("plateau_smoothing", s.plateau_smoothing);
  s.optimize_design = j.value("optimize_design", s.optimize_design);
  s.per_row_contrastive = j.value("per_row_contrastive", s.per_row_contrastive);
}

TrainingError::TrainingError(std::size_t step, const std::string& what, nlohmann::json diagnostics)
    : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step), diagnostics_(std::move(diagnostics)) {}

grad::Tensor simulate_rows(const sim::SimulationPool& pool, std::size_t y_dim, const std::vector<std::uint32_t>& rows,
                           const grad::Tensor& designs, std::uint64_t seed, std::uint64_t step, std::size_t jobs) {
  const std::size_t n = rows.size();
  grad::Tensor y(n, y_dim);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const double> xi;
      if (!designs.empty()) xi = designs.row_span(designs.rows() == 1 ? 0 : i);
      pool.simulate(rows[i], xi, sim::stream_key(seed, sim::StreamId::Simulator, step, i), y.row_span(i));
    }
  };
  const std::size_t workers = std::min(jobs, n);
  if (workers <= 1) {
    work(0, n);
    return y;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        work(w * chunk, std::min(n, (w + 1) * chunk));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return y;
}

flow::FlowConfig standardized_flow_config(const sim::Simulator& simulator, flow::FlowConfig base, std::size_t pilot,
                                          std::uint64_t seed) {
  if (pilot < 2) throw std::invalid_argument("pilot batch needs at least two simulations");
  const auto& prior = simulator.prior();
  const auto& bounds = simulator.bounds();
  base.y_dim = simulator.y_dim();
  base.theta_dim = simulator.theta_dim();
  base.xi_dim = simulator.xi_dim();
  base.theta_shift = prior.mean();
  base.theta_scale = prior.stddev();
  base.xi_lower = bounds.lower;
  base.xi_upper = bounds.upper;

  std::vector<double> sum(base.y_dim, 0.0), sum_sq(base.y_dim, 0.0);
  std::vector<double> theta(base.theta_dim), xi(base.xi_dim), y(base.y_dim);
  for (std::size_t r = 0; r < pilot; ++r) {
    auto rng = sim::make_stream(seed, sim::StreamId::Pilot, 0, r);
    theta = prior.sample(rng);
    for (std::size_t d = 0; d < base.xi_dim; ++d) {
      xi[d] = bounds.lower[d] + (bounds.upper[d] - bounds.lower[d]) * rng.uniform();
    }
    simulator.simulate(theta, xi, sim::stream_key(seed, sim::StreamId::Pilot, 1, r), y);
    for (std::size_t d = 0; d < base.y_dim; ++d) {
      sum[d] += y[d];
      sum_sq[d] += y[d] * y[d];
    }
  }
  base.y_shift.assign(base.y_dim, 0.0);
  base.y_scale.assign(base.y_dim, 1.0);
  const double n = static_cast<double>(pilot);
  for (std::size_t d = 0; d < base.y_dim; ++d) {
    const double mean = sum[d] / n;
    const double var = std::max(0.0, (sum_sq[d] - n * mean * mean) / (n - 1.0));
    base.y_shift[d] = mean;
    base.y_scale[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return base;
}

RoundResult train_round(const sim::Simulator& simulator, const sim::SimulationPool& pool,
                        flow::ConditionalFlow& flow, DesignDistribution& dist, const TrainSettings& settings,
                        const RoundContext& context, const StepHook& on_step) {
  settings.validate();
  const auto& fc = flow.config();
  if (fc.y_dim != simulator.y_dim() || fc.theta_dim != simulator.theta_dim() || fc.xi_dim != simulator.xi_dim()) {
    throw std::invalid_argument("flow dimensions do not match the simulator");
  }
  const bool has_design = simulator.xi_dim() > 0;
  if (has_design) {
    dist.validate();
    if (dist.dim() != simulator.xi_dim()) throw std::invalid_argument("design distribution dimension mismatch");
  }
  const grad::Tensor& table = pool.thetas();
  if (table.rows() == 0 || table.cols() != simulator.theta_dim()) {
    throw std::invalid_argument("parameter pool is empty or has the wrong width");
  }
  const std::size_t n = settings.batch;
  const std::size_t L = settings.contrastive;
  const std::size_t param_rows = n + (settings.per_row_contrastive ? n * L : L);
  const bool train_design = has_design && settings.optimize_design;
  dist.total_steps = settings.steps;

  Adam flow_opt({settings.lr_flow, 0.9, 0.999, 1e-8, settings.clip}, flow.parameters());
  Adam design_opt({settings.lr_design, 0.9, settings.design_beta2, 1e-8, settings.clip},
                  {grad::Tensor(1, std::max<std::size_t>(dist.dim(), 1))});
  PlateauSchedule flow_plateau(settings.plateau_patience, settings.plateau_smoothing, settings.lr_anneal,
                               settings.lr_final);
  PlateauSchedule design_plateau(settings.plateau_patience, settings.plateau_smoothing, settings.lr_anneal,
                                 settings.lr_final);

  RoundResult result;
  result.checkpoint.eig_star = -std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t k = 0; k < settings.steps; ++k) {
    const std::size_t step = context.step_offset + k;
    dist.step = k;
    const double sigma = has_design ? dist.sigma() : 0.0;
    const std::vector<double> mu_used = dist.mu;

    auto diagnostics = [&](const std::string& what) {
      return nlohmann::json{{"round", context.round}, {"step", step}, {"sigma", sigma},
                            {"mu", mu_used},         {"error", what}};
    };

    grad::Tape tape;
    const auto bound = flow.bind(tape, true);
    const auto rows = draw_rows(param_rows, table.rows(), context.seed, step);
    const grad::Tensor theta = gather(table, rows);
    const std::vector<std::uint32_t> anchors(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));

    grad::Var mu_var, xi_var;
    grad::Tensor xi_val;
    if (has_design) {
      mu_var = train_design ? tape.parameter(grad::Tensor::row(dist.mu)) : tape.constant(grad::Tensor::row(dist.mu));
      // A zero-width distribution emits one design shared by every row, which
      // lets the flow evaluate each parameter row's conditioner once.
      const std::size_t draws = sigma > 0.0 ? n : 1;
      xi_var = sample_designs(mu_var, sigma, dist.bounds, design_uniforms(draws, dist.dim(), context.seed, step));
      xi_val = xi_var.value();
    }

    grad::Tensor y_val;
    try {
      y_val = simulate_rows(pool, simulator.y_dim(), anchors, xi_val, context.seed, step, settings.jobs);
    } catch (const sim::SimulationError& e) {
      throw TrainingError(step, std::string("simulator failure: ") + e.what(), diagnostics(e.what()));
    }

    objective::DesignEIG d;
    try {
      grad::Var theta_var = tape.constant(theta);
      grad::Var y_var;
      if (train_design) {
        // Pathwise design gradient through the flow: hold the base noise of
        // the simulated outcome fixed and let y follow the inverse map.
        const auto frozen = flow.bind(tape, false);
        grad::Var theta0 = tape.constant(head_rows(theta, n));
        const grad::Tensor u =
            flow.to_base(frozen, flow::aligned_inputs(tape.constant(y_val), theta0, tape.constant(xi_val))).value();
        grad::Var path = flow.from_base(frozen, flow::aligned_inputs(tape.constant(u), theta0, xi_var));
        y_var = grad::straight_through(y_val, path);
      } else {
        y_var = tape.constant(y_val);
      }
      const auto batch = settings.per_row_contrastive
                             ? objective::per_row_contrastive_batch(y_var, theta_var, xi_var, L, settings.lambda)
                             : objective::shared_contrastive_batch(y_var, theta_var, xi_var, L, settings.lambda);
      objective::FlowLikelihood model(flow, bound);
      d = objective::eig_per_design(model, batch);
      if (!std::isfinite(d.estimate.value)) throw grad::NonFiniteError(d.estimate.objective.id(), grad::OpKind::MeanAll, false);
      tape.backward(grad::scale(d.estimate.objective, -1.0));
    } catch (const flow::FlowEvaluationError& e) {
      throw TrainingError(step, std::string("flow evaluation failed: ") + e.what(), diagnostics(e.what()));
    } catch (const grad::NonFiniteError& e) {
      throw TrainingError(step, std::string("non-finite loss: ") + e.what(), diagnostics(e.what()));
    }

    const auto& est = d.estimate;
    StepRow row;
    row.round = context.round;
    row.step = step;
    row.loss = -est.value;
    row.loss_se = est.se;
    row.sigma = sigma;
    row.mu = mu_used;
    row.anchor_loglik = est.anchor_mean;
    row.lr_flow = flow_opt.lr();
    row.lr_design = design_opt.lr();
    {
      // Lambda-free InfoNCE per row, used for reporting and checkpoints.
      std::vector<double> eig_rows(est.per_row.size());
      for (std::size_t i = 0; i < eig_rows.size(); ++i) eig_rows[i] = est.per_row[i] - settings.lambda * est.anchor_rows[i];
      double s = 0.0;
      for (double v : eig_rows) s += v;
      row.eig = s / static_cast<double>(eig_rows.size());
      if (eig_rows.size() > 1) {
        double ss = 0.0;
        for (double v : eig_rows) ss += (v - row.eig) * (v - row.eig);
        row.eig_se = std::sqrt(ss / static_cast<double>(eig_rows.size() - 1) / static_cast<double>(eig_rows.size()));
      }
      row.best_row = static_cast<std::size_t>(std::max_element(eig_rows.begin(), eig_rows.end()) - eig_rows.begin());
    }

    if (row.eig > result.checkpoint.eig_star) {
      row.checkpoint = true;
      result.checkpoint.eig_star = row.eig;
      result.checkpoint.step = step;
      result.checkpoint.xi_star = mu_used;
      result.checkpoint.best_design.clear();
      if (has_design) {
        const auto r = xi_val.row_span(xi_val.rows() == 1 ? 0 : row.best_row);
        result.checkpoint.best_design.assign(r.begin(), r.end());
      }
      result.checkpoint.parameters = flow.flat_parameters();
    }

    try {
      std::vector<grad::Tensor> grads;
      std::vector<grad::Tensor*> params;
      for (std::size_t i = 0; i < bound.params.size(); ++i) {
        grads.push_back(tape.gradient(bound.params[i]));
        params.push_back(&flow.parameters()[i]);
      }
      row.grad_norm_flow = flow_opt.step(params, grads);
      if (train_design) {
        grad::Tensor mu_t = grad::Tensor::row(dist.mu);
        grad::Tensor* mp[] = {&mu_t};
        const grad::Tensor g[] = {tape.gradient(mu_var)};
        row.grad_norm_design = design_opt.step(mp, g);
        dist.mu.assign(mu_t.data().begin(), mu_t.data().end());
        dist.clamp_mean();
      }
    } catch (const OptimizerError& e) {
      throw TrainingError(step, e.what(), diagnostics(e.what()));
    }

    flow_opt.set_lr(flow_plateau.observe(row.loss, flow_opt.lr()));
    design_opt.set_lr(design_plateau.observe(row.loss, design_opt.lr()));
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_step) on_step(row, flow);
    result.rows.push_back(std::move(row));
  }
  result.lr_reductions = flow_plateau.reductions();
  spdlog::debug("round {} finished: eig* {:.4f} at step {}", context.round, result.checkpoint.eig_star,
                result.checkpoint.step);
  return result;
}

objective::JointSamples simulate_joint(const sim::Simulator& simulator, std::size_t n, std::span<const double> xi,
                                       std::uint64_t seed) {
  if (xi.size() != simulator.xi_dim()) throw std::invalid_argument("design has the wrong size");
  objective::JointSamples out;
  out.theta = simulator.prior().sample_table(n, seed, sim::StreamId::Validation, 0);
  out.y = grad::Tensor(n, simulator.y_dim());
  for (std::size_t i = 0; i < n; ++i) {
    simulator.simulate(out.theta.row_span(i), xi, sim::stream_key(seed, sim::StreamId::Validation, 1, i),
                       out.y.row_span(i));
  }
  if (!xi.empty()) out.xi = grad::Tensor::row(xi);
  return out;
}

}  // namespace infodesign::designopt
