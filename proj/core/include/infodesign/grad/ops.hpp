#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "infodesign/grad/tape.hpp"

// Differentiable operations recorded on a Tape. Binary elementwise ops
// broadcast an operand whose rows or columns equal one.
namespace infodesign::grad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
// x[:, c] * scale[c] + shift[c]
Var affine_cols(Var x, std::span<const double> scale, std::span<const double> shift);
Var matmul(Var a, Var b);

Var tanh(Var x);
Var softplus(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);

Var sum(Var x);
Var mean(Var x);
// Sum over columns, one value per row (rows x 1).
Var row_sum(Var x);
// Max-shifted log-sum-exp over all elements (1x1) or per row (rows x 1).
Var logsumexp(Var x);
Var logsumexp_rows(Var x);

Var gather_rows(Var x, std::vector<std::uint32_t> rows);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(Var a, Var b);
Var reshape(Var x, std::size_t rows, std::size_t cols);

// Forward value is `value`; the gradient passes to `path` unchanged.
Var straight_through(Tensor value, Var path);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }
inline Var operator*(Var x, double s) { return scale(x, s); }
inline Var operator+(Var x, double c) { return add_scalar(x, c); }
inline Var operator-(Var x, double c) { return add_scalar(x, -c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

}  // namespace infodesign::grad
