#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "splab/tensor.hpp"

namespace splab {

// Differentiable primitives. Each records its adjoint on the active tape when
// an input requires grad. Every reduction sums with the innermost index
// ascending, so results are bit-reproducible.

// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[n x d] + bias[d] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);

// Row-wise softmax of a 2-D tensor with max subtraction. -inf entries map to
// exactly zero as long as each row has one finite entry.
Tensor softmax_rows(const Tensor& x);

// Normalizes each length-d vector of x[n x d] then applies gamma * xhat + beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
double gelu_value(double x);

// x[B,C,H,W] with kernels[O,C,kh,kw] and optional bias[O].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t pad);
// Non-overlapping k x k average pooling of x[B,C,H,W]; H and W must divide by k.
Tensor avgpool2d(const Tensor& x, std::size_t k);
// x[B,C,H,W] -> [B,C]
Tensor global_avgpool(const Tensor& x);

// Per-row -log softmax(logits)[label]; logits[B x C] -> [B].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels);
// Mean of cross_entropy_rows: the scalar training loss.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum_i weights[i] * x[i] over a flat tensor; the weights are constants.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

// patch_tokens[B*N x d] -> [B*(N+1) x d] with cls[d] inserted before each
// sample's N tokens.
Tensor prepend_class_token(const Tensor& patch_tokens, const Tensor& cls, std::size_t batch);
// x[B*T x d] + pos[T x d] for every sample.
Tensor add_tiled(const Tensor& x, const Tensor& pos);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Post-softmax attention probabilities of one forward call:
// probs[b][head] is a row-major T x T matrix.
struct AttentionProbs {
  std::vector<std::vector<std::vector<double>>> probs;
};

// Multi-head scaled dot-product self-attention over a packed projection
// qkv[B*T x 3d] laid out as [Q | K | V], heads splitting each d block evenly.
// `additive_mask` (T x T, 0 or -inf) is added to the logits before softmax.
// Returns the concatenated head outputs [B*T x d].
Tensor multi_head_attention(const Tensor& qkv, std::size_t batch, std::size_t tokens,
                            std::size_t heads, const std::vector<double>* additive_mask,
                            AttentionProbs* capture);

}  // namespace splab
