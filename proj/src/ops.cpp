#include "linrel/ops.hpp"

#include <cmath>

#include "linrel/errors.hpp"

namespace linrel {

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, double eps) {
  if (x.size() != gain.size() || x.size() != bias.size()) {
    throw ContractError("layer_norm: mismatched lengths");
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const double mean = x.mean();
  const Vec centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  const double inv_std = 1.0 / std::sqrt(var + eps);
  return (centered.array() * inv_std * gain.array() + bias.array()).matrix();
}

Mat layer_norm_pushforward(const Vec& x, const Vec& gain, double eps,
                           const Mat& tangent) {
  if (x.size() != gain.size() || x.size() != tangent.rows()) {
    throw ContractError("layer_norm_pushforward: mismatched dimensions");
  }
  const Index d = x.size();
  const double mean = x.mean();
  const Vec centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  const Vec xhat = centered * inv_std;

  // J = diag(g/sigma) (I - 11^T/d - xhat xhat^T/d)
  Mat out = tangent;
  const Eigen::RowVectorXd col_means = tangent.colwise().mean();
  out.rowwise() -= col_means;
  const Eigen::RowVectorXd proj = (xhat.transpose() * tangent) / static_cast<double>(d);
  out.noalias() -= xhat * proj;
  out.array().colwise() *= (gain.array() * inv_std);
  return out;
}

Vec softmax(const Vec& x) {
  if (x.size() == 0) throw ContractError("softmax: empty input");
  const double m = x.maxCoeff();
  Vec e = (x.array() - m).exp();
  return e / e.sum();
}

Mat softmax_pushforward(const Vec& probs, const Mat& tangent) {
  if (probs.size() != tangent.rows()) {
    throw ContractError("softmax_pushforward: mismatched dimensions");
  }
  // J = diag(p) - p p^T
  const Eigen::RowVectorXd weighted = probs.transpose() * tangent;
  Mat out = tangent;
  out.rowwise() -= weighted;
  out.array().colwise() *= probs.array();
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

Vec gelu(const Vec& x) {
  Vec y(x.size());
  for (Index i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Vec gelu_derivative(const Vec& x) {
  Vec y(x.size());
  for (Index i = 0; i < x.size(); ++i) y[i] = gelu_derivative(x[i]);
  return y;
}

} // namespace linrel
