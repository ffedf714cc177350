#include "infodesign/grad/ops.hpp"

namespace infodesign::grad {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw TapeError("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw TapeError("operation on an unbound Var");
  if (a.tape() != b.tape()) throw TapeError("operands live on different tapes");
  return *a.tape();
}

Var unary(OpKind op, Var x) { return tape_of(x).record(op, {x}, {}); }
Var binary(OpKind op, Var a, Var b) { return tape_of(a, b).record(op, {a, b}, {}); }

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b); }

Var scale(Var x, double factor) {
  OpAux aux;
  aux.reals = {factor};
  return tape_of(x).record(OpKind::Scale, {x}, std::move(aux));
}

Var add_scalar(Var x, double offset) {
  OpAux aux;
  aux.reals = {offset};
  return tape_of(x).record(OpKind::AddScalar, {x}, std::move(aux));
}

Var affine_cols(Var x, std::span<const double> scale_by, std::span<const double> shift) {
  const std::size_t n = x.cols();
  if (scale_by.size() != n || shift.size() != n) {
    throw ShapeError("affine_cols expects " + std::to_string(n) + " scales and shifts");
  }
  OpAux aux;
  aux.reals.reserve(2 * n);
  aux.reals.insert(aux.reals.end(), scale_by.begin(), scale_by.end());
  aux.reals.insert(aux.reals.end(), shift.begin(), shift.end());
  return tape_of(x).record(OpKind::AffineCols, {x}, std::move(aux));
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + shape_string(a.value()) + " x " + shape_string(b.value()));
  }
  return binary(OpKind::Matmul, a, b);
}

Var tanh(Var x) { return unary(OpKind::Tanh, x); }
Var softplus(Var x) { return unary(OpKind::Softplus, x); }
Var sigmoid(Var x) { return unary(OpKind::Sigmoid, x); }
Var exp(Var x) { return unary(OpKind::Exp, x); }
Var log(Var x) { return unary(OpKind::Log, x); }
Var square(Var x) { return unary(OpKind::Square, x); }

Var sum(Var x) { return unary(OpKind::SumAll, x); }

Var mean(Var x) {
  if (x.value().empty()) throw ShapeError("mean of an empty tensor");
  return unary(OpKind::MeanAll, x);
}

Var row_sum(Var x) { return unary(OpKind::RowSum, x); }

Var logsumexp(Var x) {
  if (x.value().empty()) throw ShapeError("logsumexp of an empty tensor");
  return unary(OpKind::LogSumExpAll, x);
}

Var logsumexp_rows(Var x) {
  if (x.cols() == 0) throw ShapeError("logsumexp_rows over zero columns");
  return unary(OpKind::LogSumExpRows, x);
}

Var gather_rows(Var x, std::vector<std::uint32_t> rows) {
  for (std::uint32_t r : rows) {
    if (r >= x.rows()) throw ShapeError("gather_rows index " + std::to_string(r) + " out of range");
  }
  OpAux aux;
  aux.indices = std::move(rows);
  return tape_of(x).record(OpKind::GatherRows, {x}, std::move(aux));
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) throw ShapeError("slice_cols beyond " + shape_string(x.value()));
  OpAux aux;
  aux.a = begin;
  aux.b = count;
  return tape_of(x).record(OpKind::SliceCols, {x}, std::move(aux));
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols " + shape_string(a.value()) + " with " + shape_string(b.value()));
  }
  return binary(OpKind::ConcatCols, a, b);
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.value().size()) {
    throw ShapeError("reshape " + shape_string(x.value()) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  OpAux aux;
  aux.a = rows;
  aux.b = cols;
  return tape_of(x).record(OpKind::Reshape, {x}, std::move(aux));
}

Var straight_through(Tensor value, Var path) {
  if (!value.same_shape(path.value())) {
    throw ShapeError("straight_through value " + shape_string(value) + " vs path " + shape_string(path.value()));
  }
  OpAux aux;
  aux.a = value.rows();
  aux.b = value.cols();
  aux.reals = value.values();
  return tape_of(path).record(OpKind::StraightThrough, {path}, std::move(aux));
}

}  // namespace infodesign::grad
