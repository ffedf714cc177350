#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "infodesign/objective/likelihood.hpp"

namespace infodesign::objective {

// Outcomes y (N rows) with a table of parameter rows. Row i was simulated
// under theta row anchor[i] and design row i of xi (or the single xi row);
// contrast[i * L + l] indexes its l-th contrastive parameter row.
struct ContrastiveBatch {
  grad::Var y;
  grad::Var theta;
  grad::Var xi;  // unbound for design-free tasks
  std::vector<std::uint32_t> anchor;
  std::vector<std::uint32_t> contrast;
  std::size_t L = 0;
  double lambda = 0.0;

  std::size_t rows() const noexcept { return anchor.size(); }
  void validate() const;
};

// theta rows [0, N) are anchors, rows [N, N + L) are shared by every row.
ContrastiveBatch shared_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, std::size_t L, double lambda);
// theta rows [0, N) are anchors, row i owns rows N + i * L + [0, L).
ContrastiveBatch per_row_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, std::size_t L, double lambda);
// Every other anchor acts as a contrastive sample (L = N - 1).
ContrastiveBatch in_batch_contrastive_batch(grad::Var y, grad::Var theta, grad::Var xi, double lambda);

struct MIEstimate {
  double value = 0.0;              // mean of per_row, nats
  std::vector<double> per_row;
  double se = 0.0;                 // standard error of the mean over rows
  double bound_cap = 0.0;          // log(L + 1)
  double lambda = 0.0;
  double anchor_mean = 0.0;        // mean log p(y | theta0, xi)
  std::vector<double> anchor_rows; // log p(y | theta0, xi) per row
  grad::Var objective;             // 1x1 mean on the tape
  grad::Var rows;                  // N x 1
  grad::Var lambda_leaf;           // trainable 1x1 lambda when requested
};

struct EstimatorOptions {
  // Records lambda as a trainable leaf so its derivative can be read back.
  bool lambda_leaf = false;
};

// log p(y|theta0) - logsumexp_{l=0..L} log p(y|theta_l) + log(L + 1); lambda ignored.
MIEstimate nce_loss(const LikelihoodModel& model, const ContrastiveBatch& batch);
// nce per row + lambda * log p(y|theta0).
MIEstimate nce_lambda_loss(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options = {});
// (1 + lambda) log p(y|theta0) - logsumexp_{l=0..L} log p(y|theta_l) + log(L + 1).
MIEstimate info_nce_lambda(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options = {});

// Contrastive-ratio form whose denominator averages only the L contrastive
// terms: log p(y|theta0) - log((1/L) sum_{l=1..L} p(y|theta_l)).
MIEstimate cre_loss(const LikelihoodModel& model, const ContrastiveBatch& batch);

struct DesignEIG {
  MIEstimate estimate;                     // rows of the batch
  std::vector<std::uint32_t> design_rows;  // distinct xi rows, ascending
  std::vector<double> per_design;          // mean per_row for each design row
};
// InfoNCE-lambda integrand grouped by the design each row used.
DesignEIG eig_per_design(const LikelihoodModel& model, const ContrastiveBatch& batch, EstimatorOptions options = {});

// NWJ bound with critic g: mean g(joint) - e^{-1} mean exp(g(marginal)).
// Marginal pairs are (y_i, theta_{(i+s) mod N}) for s = 1..shuffles.
using Critic = std::function<double(std::span<const double> y, std::span<const double> theta,
                                    std::span<const double> xi)>;
struct JointSamples {
  grad::Tensor y;
  grad::Tensor theta;
  grad::Tensor xi;  // N rows, one row, or empty
};
struct NWJEstimate {
  double value = 0.0;
  double joint_mean = 0.0;
  double marginal_mean = 0.0;  // mean of exp(g) over marginal pairs
  double se = 0.0;
};
NWJEstimate nwj_bound(const Critic& critic, const JointSamples& samples, std::size_t shuffles);

struct LogLikEstimate {
  double mean = 0.0;
  double se = 0.0;
};
// Mean held-out log-likelihood; throws on an empty set.
LogLikEstimate validation_loglik(const flow::ConditionalFlow& flow, const JointSamples& held_out);

// InfoNCE-lambda on a held-out set; `contrastive` rows are shared by every
// held-out pair.
MIEstimate heldout_info_nce(const flow::ConditionalFlow& flow, const JointSamples& held_out,
                            const grad::Tensor& contrastive, double lambda = 0.0);

}  // namespace infodesign::objective
