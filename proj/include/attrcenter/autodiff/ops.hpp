#pragma once

#include <cstddef>
#include <span>

#include "attrcenter/autodiff/tape.hpp"

// Differentiable primitives. Every op checks operand shapes, records itself
// on the operands' tape and rejects non-finite results with NumericError.
namespace attrcenter::ad {

// Elementwise; operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);

/// x: N×F, bias: F. Adds bias to every row.
Var add_row(Var x, Var bias);

/// a: m×k, b: k×n.
Var matmul(Var a, Var b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: N×C×H×W, weight: O×C×K×K (square kernel). No bias; pair with channel_affine.
Var conv2d(Var x, Var weight, Conv2dOptions opts = {});

/// x: N×C×H×W; scale, shift: C. Per-channel y = scale_c * x + shift_c.
Var channel_affine(Var x, Var scale, Var shift);

/// Per-channel standardisation over N, H and W with the biased batch
/// variance: (x - mean_c) / sqrt(var_c + eps). Writes the batch statistics out
/// when asked. x: N×C×H×W.
Var batch_norm(Var x, double eps = 1e-5, Tensor* mean = nullptr, Tensor* var = nullptr);

/// Subgradient 0 at the kink.
Var relu(Var x);

/// max(x, c) elementwise; subgradient 0 at equality.
Var clamp_min(Var x, double c);

/// Non-overlapping k×k windows with stride k; trailing rows/cols are dropped.
Var max_pool2d(Var x, std::size_t k);
Var avg_pool2d(Var x, std::size_t k);

/// N×C×H×W -> N×C.
Var global_avg_pool(Var x);

Var sum(Var x);
Var sq_norm(Var x);
/// m×k -> m.
Var row_sum(Var x);
/// m×d -> m, squared L2 norm of each row.
Var row_sq_norm(Var x);

/// Summed over the batch: sum_i -log softmax(logits_i)[label_i].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

/// table: n×d -> result m×d with row i = table[indices[i]].
Var gather_rows(Var table, std::span<const std::size_t> indices);

/// x: m×d, c: k×d -> m×k matrix of squared Euclidean distances.
Var sq_dist_matrix(Var x, Var c);

Var reshape(Var x, Shape shape);
/// Rows [begin, end) of the leading axis.
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Concatenates along the leading axis; trailing dims must agree.
Var concat_rows(Var a, Var b);

}  // namespace attrcenter::ad
