#include "infodesign/grad/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace infodesign::grad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutableMap = Eigen::Map<RowMatrix>;

struct Broadcast {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t a_row_stride = 0;
  std::size_t a_col_stride = 0;
  std::size_t b_row_stride = 0;
  std::size_t b_col_stride = 0;
  bool same = false;
};

Broadcast broadcast(const Tensor& a, const Tensor& b) {
  Broadcast bc;
  bc.rows = std::max(a.rows(), b.rows());
  bc.cols = std::max(a.cols(), b.cols());
  auto fits = [&](const Tensor& t) {
    return (t.rows() == bc.rows || t.rows() == 1) && (t.cols() == bc.cols || t.cols() == 1);
  };
  if (!fits(a) || !fits(b)) {
    throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
  }
  bc.a_row_stride = a.rows() == 1 ? 0 : a.cols();
  bc.a_col_stride = a.cols() == 1 ? 0 : 1;
  bc.b_row_stride = b.rows() == 1 ? 0 : b.cols();
  bc.b_col_stride = b.cols() == 1 ? 0 : 1;
  bc.same = a.same_shape(b);
  return bc;
}

template <typename F>
Tensor binary_forward(const Tensor& a, const Tensor& b, F f) {
  const Broadcast bc = broadcast(a, b);
  Tensor out(bc.rows, bc.cols);
  if (bc.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      out(r, c) = f(a[r * bc.a_row_stride + c * bc.a_col_stride],
                    b[r * bc.b_row_stride + c * bc.b_col_stride]);
    }
  }
  return out;
}

// f(a, b, g) returns the pair (dL/da, dL/db) contribution for one element.
template <typename F>
void binary_backward(const Tensor& a, const Tensor& b, const Tensor& g, Tensor* ga, Tensor* gb, F f) {
  const Broadcast bc = broadcast(a, b);
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      const std::size_t ia = r * bc.a_row_stride + c * bc.a_col_stride;
      const std::size_t ib = r * bc.b_row_stride + c * bc.b_col_stride;
      const auto [da, db] = f(a[ia], b[ib], g(r, c));
      if (ga) (*ga)[ia] += da;
      if (gb) (*gb)[ib] += db;
    }
  }
}

template <typename F>
Tensor unary_forward(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logsumexp_span(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

}  // namespace

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::AffineCols: return "affine_cols";
    case OpKind::Matmul: return "matmul";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::SumAll: return "sum";
    case OpKind::MeanAll: return "mean";
    case OpKind::RowSum: return "row_sum";
    case OpKind::LogSumExpAll: return "logsumexp";
    case OpKind::LogSumExpRows: return "logsumexp_rows";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Reshape: return "reshape";
    case OpKind::StraightThrough: return "straight_through";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

NonFiniteError::NonFiniteError(std::size_t node, OpKind op, bool in_gradient)
    : std::runtime_error(std::string("non-finite ") + (in_gradient ? "gradient" : "value") + " at node " +
                         std::to_string(node) + " (" + op_name(op) + ")"),
      node_(node),
      op_(op) {}

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = OpKind::Leaf;
  node.value = std::move(value);
  if (!node.value.all_finite()) throw NonFiniteError(nodes_.size(), OpKind::Leaf, false);
  return push(std::move(node));
}

Var Tape::parameter(Tensor value) {
  Node node;
  node.op = OpKind::Leaf;
  node.requires_grad = true;
  node.value = std::move(value);
  if (!node.value.all_finite()) throw NonFiniteError(nodes_.size(), OpKind::Leaf, false);
  Var v = push(std::move(node));
  parameters_.push_back(v);
  return v;
}

Var Tape::push(Node node) {
  if (nodes_.size() >= kNone) throw TapeError("tape is full");
  nodes_.push_back(std::move(node));
  has_gradients_ = false;
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this) throw TapeError("Var belongs to a different tape");
  if (v.id() >= nodes_.size()) throw TapeError("Var index out of range");
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

Var Tape::handle(std::uint32_t id) {
  if (id >= nodes_.size()) throw TapeError("node id out of range");
  return Var(this, id);
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

Var Tape::record(OpKind op, std::initializer_list<Var> parents, OpAux aux) {
  if (parents.size() == 0 || parents.size() > 2) throw TapeError("operations take one or two parents");
  Node node;
  node.op = op;
  node.aux = std::move(aux);
  auto it = parents.begin();
  check_owned(*it);
  node.parent0 = it->id();
  node.requires_grad = nodes_[node.parent0].requires_grad;
  if (parents.size() == 2) {
    ++it;
    check_owned(*it);
    node.parent1 = it->id();
    node.requires_grad = node.requires_grad || nodes_[node.parent1].requires_grad;
  }
  node.value = compute(node);
  if (!node.value.all_finite()) throw NonFiniteError(nodes_.size(), op, false);
  return push(std::move(node));
}

Var Tape::record_custom(std::shared_ptr<const CustomOp> op, std::initializer_list<Var> parents) {
  if (!op) throw TapeError("null custom op");
  if (parents.size() == 0 || parents.size() > 2) throw TapeError("operations take one or two parents");
  Node node;
  node.op = OpKind::Custom;
  node.custom = std::move(op);
  auto it = parents.begin();
  check_owned(*it);
  node.parent0 = it->id();
  node.requires_grad = nodes_[node.parent0].requires_grad;
  if (parents.size() == 2) {
    ++it;
    check_owned(*it);
    node.parent1 = it->id();
    node.requires_grad = node.requires_grad || nodes_[node.parent1].requires_grad;
  }
  node.value = compute(node);
  if (!node.value.all_finite()) throw NonFiniteError(nodes_.size(), OpKind::Custom, false);
  return push(std::move(node));
}

Tensor Tape::compute(const Node& node) const {
  const Tensor& a = node.parent0 != kNone ? nodes_[node.parent0].value : node.value;
  const Tensor* b = node.parent1 != kNone ? &nodes_[node.parent1].value : nullptr;
  const OpAux& aux = node.aux;
  switch (node.op) {
    case OpKind::Leaf:
      return node.value;
    case OpKind::Add:
      return binary_forward(a, *b, [](double x, double y) { return x + y; });
    case OpKind::Sub:
      return binary_forward(a, *b, [](double x, double y) { return x - y; });
    case OpKind::Mul:
      return binary_forward(a, *b, [](double x, double y) { return x * y; });
    case OpKind::Div:
      return binary_forward(a, *b, [](double x, double y) { return x / y; });
    case OpKind::Scale: {
      const double s = aux.reals[0];
      return unary_forward(a, [s](double x) { return s * x; });
    }
    case OpKind::AddScalar: {
      const double c = aux.reals[0];
      return unary_forward(a, [c](double x) { return x + c; });
    }
    case OpKind::AffineCols: {
      Tensor out(a.rows(), a.cols());
      const std::size_t n = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) out(r, c) = a(r, c) * aux.reals[c] + aux.reals[n + c];
      }
      return out;
    }
    case OpKind::Matmul: {
      Tensor out(a.rows(), b->cols());
      MutableMap(out.data().data(), out.rows(), out.cols()).noalias() =
          ConstMap(a.data().data(), a.rows(), a.cols()) * ConstMap(b->data().data(), b->rows(), b->cols());
      return out;
    }
    case OpKind::Tanh:
      return unary_forward(a, [](double x) { return std::tanh(x); });
    case OpKind::Softplus:
      return unary_forward(a, softplus_scalar);
    case OpKind::Sigmoid:
      return unary_forward(a, sigmoid_scalar);
    case OpKind::Exp:
      return unary_forward(a, [](double x) { return std::exp(x); });
    case OpKind::Log:
      return unary_forward(a, [](double x) { return std::log(x); });
    case OpKind::Square:
      return unary_forward(a, [](double x) { return x * x; });
    case OpKind::SumAll: {
      double s = 0.0;
      for (double v : a.data()) s += v;
      return Tensor::scalar(s);
    }
    case OpKind::MeanAll: {
      double s = 0.0;
      for (double v : a.data()) s += v;
      return Tensor::scalar(s / static_cast<double>(a.size()));
    }
    case OpKind::RowSum: {
      Tensor out(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double v : a.row_span(r)) s += v;
        out[r] = s;
      }
      return out;
    }
    case OpKind::LogSumExpAll:
      return Tensor::scalar(logsumexp_span(a.data().data(), a.size()));
    case OpKind::LogSumExpRows: {
      Tensor out(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r) out[r] = logsumexp_span(a.row_span(r).data(), a.cols());
      return out;
    }
    case OpKind::GatherRows: {
      Tensor out(aux.indices.size(), a.cols());
      for (std::size_t k = 0; k < aux.indices.size(); ++k) {
        auto src = a.row_span(aux.indices[k]);
        std::copy(src.begin(), src.end(), out.row_span(k).begin());
      }
      return out;
    }
    case OpKind::SliceCols: {
      Tensor out(a.rows(), aux.b);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < aux.b; ++c) out(r, c) = a(r, aux.a + c);
      }
      return out;
    }
    case OpKind::ConcatCols: {
      Tensor out(a.rows(), a.cols() + b->cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row_span(r);
        auto ra = a.row_span(r);
        auto rb = b->row_span(r);
        std::copy(ra.begin(), ra.end(), dst.begin());
        std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
      }
      return out;
    }
    case OpKind::Reshape:
      return a.reshaped(aux.a, aux.b);
    case OpKind::StraightThrough:
      return Tensor(aux.a, aux.b, aux.reals);
    case OpKind::Custom: {
      std::array<const Tensor*, 2> inputs{&a, b};
      return node.custom->forward(std::span<const Tensor* const>(inputs.data(), b ? 2 : 1));
    }
  }
  throw TapeError("unhandled op");
}

void Tape::accumulate_parent_grads(std::uint32_t index) {
  const Node& node = nodes_[index];
  const Tensor& g = grads_[index];
  auto grad_slot = [&](std::uint32_t parent) -> Tensor* {
    if (parent == kNone || !nodes_[parent].requires_grad) return nullptr;
    Tensor& slot = grads_[parent];
    if (slot.empty() && !nodes_[parent].value.empty()) {
      slot = Tensor(nodes_[parent].value.rows(), nodes_[parent].value.cols());
    }
    return &slot;
  };
  Tensor* ga = grad_slot(node.parent0);
  Tensor* gb = grad_slot(node.parent1);
  if (!ga && !gb) return;
  const Tensor& a = node.parent0 != kNone ? nodes_[node.parent0].value : node.value;
  const Tensor* b = node.parent1 != kNone ? &nodes_[node.parent1].value : nullptr;
  const Tensor& y = node.value;

  switch (node.op) {
    case OpKind::Leaf:
      return;
    case OpKind::Add:
      binary_backward(a, *b, g, ga, gb, [](double, double, double gi) { return std::pair{gi, gi}; });
      return;
    case OpKind::Sub:
      binary_backward(a, *b, g, ga, gb, [](double, double, double gi) { return std::pair{gi, -gi}; });
      return;
    case OpKind::Mul:
      binary_backward(a, *b, g, ga, gb, [](double x, double w, double gi) { return std::pair{gi * w, gi * x}; });
      return;
    case OpKind::Div:
      binary_backward(a, *b, g, ga, gb,
                      [](double x, double w, double gi) { return std::pair{gi / w, -gi * x / (w * w)}; });
      return;
    case OpKind::Scale: {
      const double s = node.aux.reals[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
      return;
    }
    case OpKind::AddScalar:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      return;
    case OpKind::AffineCols: {
      const std::size_t n = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) (*ga)(r, c) += g(r, c) * node.aux.reals[c];
      }
      return;
    }
    case OpKind::Matmul: {
      ConstMap gm(g.data().data(), g.rows(), g.cols());
      if (ga) {
        MutableMap(ga->data().data(), ga->rows(), ga->cols()).noalias() +=
            gm * ConstMap(b->data().data(), b->rows(), b->cols()).transpose();
      }
      if (gb) {
        MutableMap(gb->data().data(), gb->rows(), gb->cols()).noalias() +=
            ConstMap(a.data().data(), a.rows(), a.cols()).transpose() * gm;
      }
      return;
    }
    case OpKind::Tanh:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    case OpKind::Softplus:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * sigmoid_scalar(a[i]);
      return;
    case OpKind::Sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    case OpKind::Exp:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
      return;
    case OpKind::Log:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a[i];
      return;
    case OpKind::Square:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * g[i] * a[i];
      return;
    case OpKind::SumAll:
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0];
      return;
    case OpKind::MeanAll: {
      const double gi = g[0] / static_cast<double>(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += gi;
      return;
    }
    case OpKind::RowSum:
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) (*ga)(r, c) += g[r];
      }
      return;
    case OpKind::LogSumExpAll:
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g[0] * std::exp(a[i] - y[0]);
      return;
    case OpKind::LogSumExpRows:
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) (*ga)(r, c) += g[r] * std::exp(a(r, c) - y[r]);
      }
      return;
    case OpKind::GatherRows:
      for (std::size_t k = 0; k < node.aux.indices.size(); ++k) {
        auto dst = ga->row_span(node.aux.indices[k]);
        auto src = g.row_span(k);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
      return;
    case OpKind::SliceCols:
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < node.aux.b; ++c) (*ga)(r, node.aux.a + c) += g(r, c);
      }
      return;
    case OpKind::ConcatCols:
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (ga) {
          for (std::size_t c = 0; c < a.cols(); ++c) (*ga)(r, c) += g(r, c);
        }
        if (gb) {
          for (std::size_t c = 0; c < b->cols(); ++c) (*gb)(r, c) += g(r, a.cols() + c);
        }
      }
      return;
    case OpKind::Reshape:
    case OpKind::StraightThrough:
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      return;
    case OpKind::Custom: {
      std::array<const Tensor*, 2> inputs{&a, b};
      std::array<Tensor*, 2> grads{ga, gb};
      const std::size_t n = b ? 2 : 1;
      node.custom->backward(std::span<const Tensor* const>(inputs.data(), n), y, g,
                            std::span<Tensor* const>(grads.data(), n));
      return;
    }
  }
}

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw TapeError("backward called before any forward operation was recorded");
  check_owned(output);
  const Node& out = nodes_[output.id()];
  if (!seed.same_shape(out.value)) {
    throw ShapeError("seed shape " + shape_string(seed) + " does not match output " + shape_string(out.value));
  }
  grads_.assign(nodes_.size(), Tensor());
  has_gradients_ = true;
  if (!out.requires_grad) return;
  grads_[output.id()] = seed;
  for (std::uint32_t i = output.id() + 1; i-- > 0;) {
    if (!nodes_[i].requires_grad || grads_[i].empty()) continue;
    if (!grads_[i].all_finite()) throw NonFiniteError(i, nodes_[i].op, true);
    accumulate_parent_grads(i);
  }
}

void Tape::backward(Var output) {
  check_owned(output);
  const Tensor& v = nodes_[output.id()].value;
  if (v.size() != 1) throw ShapeError("backward without a seed requires a scalar output, got " + shape_string(v));
  backward(output, Tensor(v.rows(), v.cols(), 1.0));
}

Tensor Tape::gradient(Var v) const {
  check_owned(v);
  if (!has_gradients_) throw TapeError("gradient requested before backward");
  const Tensor& g = grads_[v.id()];
  if (g.empty()) return Tensor(nodes_[v.id()].value.rows(), nodes_[v.id()].value.cols());
  return g;
}

std::vector<Tensor> Tape::parameter_gradients() const {
  std::vector<Tensor> out;
  out.reserve(parameters_.size());
  for (Var p : parameters_) out.push_back(gradient(p));
  return out;
}

void Tape::set_leaf(Var leaf, Tensor value) {
  check_owned(leaf);
  Node& node = nodes_[leaf.id()];
  if (node.op != OpKind::Leaf) throw TapeError("set_leaf on a non-leaf node");
  if (!value.same_shape(node.value)) {
    throw ShapeError("leaf shape " + shape_string(node.value) + " cannot take " + shape_string(value));
  }
  if (!value.all_finite()) throw NonFiniteError(leaf.id(), OpKind::Leaf, false);
  node.value = std::move(value);
  has_gradients_ = false;
}

const Tensor& Tape::forward(Var output) {
  check_owned(output);
  for (std::uint32_t i = 0; i <= output.id(); ++i) {
    Node& node = nodes_[i];
    if (node.op == OpKind::Leaf) continue;
    Tensor v = compute(node);
    if (!v.all_finite()) throw NonFiniteError(i, node.op, false);
    node.value = std::move(v);
  }
  has_gradients_ = false;
  return nodes_[output.id()].value;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  parameters_.clear();
  has_gradients_ = false;
}

Tensor forward(Tape& tape, const InputMap& inputs, Var output) {
  for (const auto& [id, value] : inputs) {
    if (id >= tape.size()) throw TapeError("input id out of range");
    tape.set_leaf(tape.handle(id), value);
  }
  return tape.forward(output);
}

}  // namespace infodesign::grad
