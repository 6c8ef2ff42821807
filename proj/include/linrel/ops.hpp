#pragma once

#include "linrel/types.hpp"

namespace linrel {

/// Layer-norm epsilon used by every model in this project (the usual
/// transformer convention).
inline constexpr double kLayerNormEps = 1e-5;

/// (x - mean) / sqrt(var + eps) * gain + bias, population variance.
Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, double eps);

/// Exact Jacobian-times-tangent of layer_norm at x. `tangent` has one column
/// per direction.
Mat layer_norm_pushforward(const Vec& x, const Vec& gain, double eps,
                           const Mat& tangent);

/// Numerically stable softmax: positive outputs summing to 1.
Vec softmax(const Vec& x);

/// J_softmax(x) * tangent given probs = softmax(x).
Mat softmax_pushforward(const Vec& probs, const Mat& tangent);

/// GELU, tanh approximation (the variant baked into shipped checkpoints).
double gelu(double x);
Vec gelu(const Vec& x);
double gelu_derivative(double x);
Vec gelu_derivative(const Vec& x);

} // namespace linrel
