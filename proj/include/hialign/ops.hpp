// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hialign/autodiff.hpp"
#include "hialign/rng.hpp"
#include "hialign/tensor.hpp"

// Differentiable primitives. Each op computes its value eagerly and records a
// backward rule on the tape of its first argument.
namespace hialign::ops {

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kBceClamp = 1e-12;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// x[..., n] + bias[n]
Var add_bias(Var x, Var bias);
Var scale(Var a, double c);
// a / s for a learnable scalar s.
Var div_scalar(Var a, Var s);

Var matmul(Var a, Var b);
Var transpose(Var a);
// y = x W^T (+ b), x[T, in], W[out, in], b[out].
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);

// Exact GELU, x * Phi(x).
Var gelu(Var x);

Var sum(Var x);
Var mean(Var x);
// Sums out one axis, e.g. [T, U] -> [U] for axis 0.
Var sum_axis(Var x, std::size_t axis);
Var reshape(Var x, Shape shape);
// Leading-axis slice [begin, end).
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
// Stacks equally shaped tensors along a new leading axis.
Var stack(const std::vector<Var>& parts);

Var softmax(Var x, std::size_t axis);
// softmax(x / tau) along `axis`; tau > 0.
Var softmax_temp(Var x, std::size_t axis, double tau);
Var softmax_temp(Var x, std::size_t axis, Var tau);

// entry (i, u) = a_i . b_u / (max(|a_i|, eps) * max(|b_u|, eps)) for a[T, K], b[K, U].
Var cosine_sim_matrix(Var a, Var b, double eps = kCosineEps);

// Mean binary cross-entropy; predictions are clamped to [1e-12, 1 - 1e-12].
Var bce_mean(Var pred, const Tensor& target);
// Number of clamped predictions seen by bce_mean since the last reset.
std::size_t bce_clamp_events();
void reset_bce_clamp_events();

// Mean over non-ignored rows of -log softmax(logits)[row, target].
Var cross_entropy_logits(Var logits, std::span<const int> targets, int ignore_id = -1);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};
// Normalizes x[N, D] over N. Training mode uses batch statistics and updates the
// running estimates; eval mode uses the running estimates.
Var batch_norm_1d(Var x, Var gamma, Var beta, const BatchNormState& state, bool training);

// Inverted dropout; identity when !training or p == 0.
Var dropout(Var x, double p, Rng* rng, bool training);

Var embedding(Var table, std::span<const int> ids);

// Mean over rows whose mask entry is true (all rows if mask is empty).
Var mean_pool(Var seq, std::span<const bool> mask = {});

// Means of consecutive groups of `factor` rows; a short final group is averaged on its own.
Var temporal_downsample(Var x, std::size_t factor = 2);

enum class MaskKind { kNone, kBand, kCausal };

struct AttentionSpec {
  std::size_t heads = 1;
  MaskKind mask = MaskKind::kNone;
  // Band mask: position i sees j with |i - j| <= half_window.
  std::size_t half_window = 3;
  bool rope = false;
  double rope_base = 10000.0;
};

bool attention_allowed(const AttentionSpec& spec, std::size_t i, std::size_t j);

// Multi-head scaled dot-product attention over already projected q[Tq, D],
// k[Tk, D], v[Tk, D]. Disallowed positions get weight exactly 0.
Var attention(Var q, Var k, Var v, const AttentionSpec& spec);

// Attention probabilities per head, [heads][Tq, Tk]; same math as attention().
std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, const AttentionSpec& spec);

// Rotary embedding of x[T, heads, d_head] (or [T, d_head]) at the given
// positions: pair (2i, 2i+1) is rotated by pos * base^(-2i / d_head).
Tensor rope_rotate(const Tensor& x, std::span<const std::size_t> positions, double base = 10000.0,
                   bool inverse = false);

}  // namespace hialign::ops
