#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "infodesign/grad/tensor.hpp"

namespace infodesign::grad {

class Tape;

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  AffineCols,
  Matmul,
  Tanh,
  Softplus,
  Sigmoid,
  Exp,
  Log,
  Square,
  SumAll,
  MeanAll,
  RowSum,
  LogSumExpAll,
  LogSumExpRows,
  GatherRows,
  SliceCols,
  ConcatCols,
  Reshape,
  StraightThrough,
  Custom,
};

const char* op_name(OpKind op) noexcept;

// Raised when a forward value or a gradient contains NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t node, OpKind op, bool in_gradient);
  std::size_t node() const noexcept { return node_; }
  OpKind op() const noexcept { return op_; }

 private:
  std::size_t node_;
  OpKind op_;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Per-node constants that parameterize an operation (scales, indices, spline
// settings, stored noise). Never differentiated.
struct OpAux {
  std::vector<double> reals;
  std::vector<std::uint32_t> indices;
  std::size_t a = 0;
  std::size_t b = 0;
};

// Fused operation supplied by a client module (spline bijectors, truncated
// normal reparameterization). Inputs are the parent values in order.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual const char* name() const noexcept = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) const = 0;
  // Accumulates vector-Jacobian products into grad_inputs; an entry is null
  // when that parent does not require a gradient.
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                        const Tensor& grad_output, std::span<Tensor* const> grad_inputs) const = 0;
};

// Append-only reverse-mode tape. Node i only references parents with index
// less than i, so a single reverse sweep computes all gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  std::span<const Var> parameters() const noexcept { return parameters_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(Var v) const;
  Var handle(std::uint32_t id);
  bool requires_grad(Var v) const;

  Var record(OpKind op, std::initializer_list<Var> parents, OpAux aux);
  Var record_custom(std::shared_ptr<const CustomOp> op, std::initializer_list<Var> parents);

  // Runs the reverse sweep from `output`, seeded with `seed` (same shape).
  void backward(Var output, const Tensor& seed);
  // Scalar outputs only.
  void backward(Var output);

  // Gradient of the last backward output with respect to `v`. Nodes that
  // the output does not depend on report zeros of the right shape.
  Tensor gradient(Var v) const;
  std::vector<Tensor> parameter_gradients() const;

  // Replaces a leaf's value; call forward() to recompute dependents.
  void set_leaf(Var leaf, Tensor value);
  // Recomputes every non-leaf node in order and returns the output value.
  const Tensor& forward(Var output);

  void clear();

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::uint32_t parent0 = kNone;
    std::uint32_t parent1 = kNone;
    bool requires_grad = false;
    Tensor value;
    OpAux aux;
    std::shared_ptr<const CustomOp> custom;
  };
  static constexpr std::uint32_t kNone = 0xffffffffu;

  Var push(Node node);
  void check_owned(Var v) const;
  Tensor compute(const Node& node) const;
  void accumulate_parent_grads(std::uint32_t index);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<Var> parameters_;
  bool has_gradients_ = false;
};

using InputMap = std::unordered_map<std::uint32_t, Tensor>;

// Re-evaluates a recorded tape with new leaf values keyed by node id.
Tensor forward(Tape& tape, const InputMap& inputs, Var output);

}  // namespace infodesign::grad
