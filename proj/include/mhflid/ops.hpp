#pragma once

#include <cstddef>
#include <span>

#include "mhflid/tensor.hpp"

namespace mhflid::ops {

// Broadcasting is limited to bias-add inside linear/conv ops; every other
// shape mismatch raises DimensionError.

/// [m x k] . [k x n], or batched [b x m x k] . [b x k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two dimensions of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
/// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

/// y = x W^T + b over the last dimension. W is [d_out x d_in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. x [N x C x H x W], weight [O x C x kh x kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});
/// Adjoint of conv2d w.r.t. its input. weight [C_in x C_out x kh x kw].
/// Output side is (H - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

/// Padded cells never win. Ties route the gradient to the first row-major index.
Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0);
/// [N x C x H x W] -> [N x C].
Tensor global_avg_pool(const Tensor& x);
/// [N x ...] -> [N x prod(...)].
Tensor flatten(const Tensor& x);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// x [N x C]. In training mode normalizes with batch statistics and updates the
/// running statistics in place (unbiased variance); otherwise uses them.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training);

/// [N x C x H x W] -> [N x (H*W) x C].
Tensor features_to_tokens(const Tensor& feat);
/// [N x T x C] -> [N x C x H x W] with T == H * W.
Tensor tokens_to_features(const Tensor& tokens, std::size_t height, std::size_t width);
/// [N x T x C] -> [N x C].
Tensor mean_tokens(const Tensor& tokens);
/// [N x C] -> [N x T x C].
Tensor repeat_tokens(const Tensor& x, std::size_t count);

/// Mean over samples of -log softmax(logits)[label]. logits [N x C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

enum class KlVariant { Standard, Appendix };

/// Mean over samples (and pixels, for [N x C x H x W] logits) of
/// KL(softmax(teacher) || softmax(student)). The teacher never receives gradient.
/// The Appendix variant evaluates sum_c [p log p - q log q] instead.
Tensor kl_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               KlVariant variant = KlVariant::Standard);

/// Soft Dice loss over foreground classes 1..C-1. probs [N x C x H x W], labels
/// [N*H*W]. Mean over samples and foreground classes of
/// 1 - (2 sum p t + eps) / (sum p + sum t + eps).
Tensor dice_loss(const Tensor& probs, std::span<const int> labels, double eps = 1e-6);

}  // namespace mhflid::ops
