#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sketchhash/graph.hpp"

namespace sketchhash {

// Differentiable primitives. Every function records one node; shapes are
// checked up front and mismatches raise ShapeError naming both operands.

/// [m x k] * [k x n]
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
/// x + b with b of shape [n] broadcast over the rows of x [m x n].
Var add_bias(const Var& x, const Var& b);
/// scale * x + shift, elementwise.
Var affine(const Var& x, double scale, double shift = 0.0);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

/// Column-wise concatenation of [m x n_i] operands.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Columns [start, start + count) of a 2-D operand.
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var reshape(const Var& x, Shape shape);

enum class Padding { Valid, Same };

/// x [N, C, H, W], w [O, C, k, k], b [O] -> [N, O, H', W'].
/// Same padding gives H' = ceil(H / stride) with the extra row/column of an
/// odd pad total placed at the bottom/right.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, Padding padding);
/// Max over k x k windows; the first maximum in row-major window order wins.
Var max_pool2d(const Var& x, int kernel, int stride);

/// Mean over rows of -log softmax(logits)[label], max-subtracted.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Row i of the result is row i of sources[source_of_row[i]]; -1 gives zeros.
/// All sources share one [m x n] shape.
Var gather_rows(std::span<const Var> sources, std::span<const int> source_of_row);

/// Row i is taken from `when_set` if mask[i] != 0, otherwise from `when_clear`.
Var select_rows(std::span<const std::uint8_t> mask, const Var& when_set, const Var& when_clear);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& x) { return affine(x, s); }

}  // namespace sketchhash
