#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

enum class Activation { relu, gelu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);

// Every layer op below takes leading dimensions as rows: a tensor of shape
// [..., n] is treated as a (numel / n) x n matrix. Parameter gradients are
// accumulated only for trainable parameters.

/// out = x * W + b, with W: [n_in x n_out], b: [n_out].
Tensor linear_forward(const Tensor& x, const Parameter& w, const Parameter& b);

/// Accumulates dW, db (when trainable). Returns dx, or an empty tensor when
/// need_dx is false.
Tensor linear_backward(const Tensor& dout, const Tensor& x, Parameter& w,
                       Parameter& b, bool need_dx = true);

struct LayerNormCache {
  std::vector<double> xhat;
  std::vector<double> rstd;
  Shape shape;
};

/// Row-wise normalization to zero mean, unit (population) variance, then
/// gain * xhat + shift.
Tensor layer_norm(const Tensor& x, const Parameter& gain, const Parameter& shift,
                  double eps, LayerNormCache* cache = nullptr);
Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache,
                           Parameter& gain, Parameter& shift);

Tensor activation_forward(const Tensor& pre, Activation act);
Tensor activation_backward(const Tensor& dy, const Tensor& pre, Activation act);

struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

struct AttentionCache {
  Tensor x, q, k, v, probs, ctx;
  std::size_t heads = 0;
};

/// Scaled dot-product self-attention over x: [B x S x n], no mask.
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p,
                            std::size_t heads, AttentionCache* cache = nullptr);
Tensor multi_head_attention_backward(const Tensor& dout, const AttentionCache& cache,
                                     AttentionParams& p, bool need_dx = true);

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;  // d(mean loss)/d(logits)
};

/// Mean negative log-softmax of the true class, max-subtracted.
LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// p -= lr * grad for trainable parameters, then drops their gradients.
/// Throws TrainingError if a trainable parameter has no gradient.
void sgd_step(std::span<Parameter* const> params, double lr);

/// f(true) evaluates the loss and accumulates analytic gradients into the
/// parameters; f(false) only evaluates the loss.
using LossFn = std::function<double(bool compute_grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per
  /// parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Denominator floor: err = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// Central-difference check of every trainable coordinate. Returns the
/// maximum relative error (0 when there is nothing to check).
double grad_check(const LossFn& f, std::span<Parameter* const> params,
                  const GradCheckOptions& opts = {});

}  // namespace fedadapt
