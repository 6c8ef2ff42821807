#include "linrel/diff.hpp"

#include <cmath>
#include <string>

#include "linrel/errors.hpp"
#include "linrel/ops.hpp"

namespace linrel {

Mat jacobian(const DifferentiableMap& f, const Vec& x) {
  if (x.size() != f.input_dim()) {
    throw ContractError("jacobian: input has length " + std::to_string(x.size()) +
                        ", map expects " + std::to_string(f.input_dim()));
  }
  const Mat seed = Mat::Identity(f.input_dim(), f.input_dim());
  return f.value_and_pushforward(x, seed).second;
}

Mat finite_diff_jacobian(const DifferentiableMap& f, const Vec& x, double h) {
  if (x.size() != f.input_dim()) {
    throw ContractError("finite_diff_jacobian: input has length " +
                        std::to_string(x.size()) + ", map expects " +
                        std::to_string(f.input_dim()));
  }
  if (!(h > 0.0)) throw ContractError("finite_diff_jacobian: h must be positive");
  Mat j(f.output_dim(), f.input_dim());
  Vec probe = x;
  for (Index col = 0; col < x.size(); ++col) {
    probe[col] = x[col] + h;
    const Vec fp = f.value(probe);
    probe[col] = x[col] - h;
    const Vec fm = f.value(probe);
    probe[col] = x[col];
    const Vec dcol = (fp - fm) / (2.0 * h);
    if (!dcol.allFinite()) {
      throw NumericError("finite_diff_jacobian: non-finite output at column " +
                         std::to_string(col));
    }
    j.col(col) = dcol;
  }
  return j;
}

AffineMap::AffineMap(Mat a, Vec c) : a_(std::move(a)), c_(std::move(c)) {
  if (a_.rows() != c_.size()) throw ContractError("AffineMap: rows(A) != len(c)");
}

Vec AffineMap::value(const Vec& x) const { return a_ * x + c_; }

std::pair<Vec, Mat> AffineMap::value_and_pushforward(const Vec& x,
                                                     const Mat& tangent) const {
  return {a_ * x + c_, a_ * tangent};
}

LayerNormMap::LayerNormMap(Vec gain, Vec bias, double eps)
    : gain_(std::move(gain)), bias_(std::move(bias)), eps_(eps) {
  if (gain_.size() != bias_.size()) throw ContractError("LayerNormMap: mismatched lengths");
}

Vec LayerNormMap::value(const Vec& x) const {
  return layer_norm(x, gain_, bias_, eps_);
}

std::pair<Vec, Mat> LayerNormMap::value_and_pushforward(const Vec& x,
                                                        const Mat& tangent) const {
  return {layer_norm(x, gain_, bias_, eps_),
          layer_norm_pushforward(x, gain_, eps_, tangent)};
}

Vec GeluMap::value(const Vec& x) const { return gelu(x); }

std::pair<Vec, Mat> GeluMap::value_and_pushforward(const Vec& x,
                                                   const Mat& tangent) const {
  Mat out = tangent;
  out.array().colwise() *= gelu_derivative(x).array();
  return {gelu(x), std::move(out)};
}

Vec SoftmaxMap::value(const Vec& x) const { return softmax(x); }

std::pair<Vec, Mat> SoftmaxMap::value_and_pushforward(const Vec& x,
                                                      const Mat& tangent) const {
  const Vec probs = softmax(x);
  return {probs, softmax_pushforward(probs, tangent)};
}

ChainMap::ChainMap(std::vector<std::shared_ptr<const DifferentiableMap>> stages)
    : stages_(std::move(stages)) {
  if (stages_.empty()) throw ContractError("ChainMap: no stages");
  for (std::size_t i = 1; i < stages_.size(); ++i) {
    if (stages_[i]->input_dim() != stages_[i - 1]->output_dim()) {
      throw ContractError("ChainMap: stage " + std::to_string(i) +
                          " input dim does not match previous output dim");
    }
  }
}

Index ChainMap::input_dim() const { return stages_.front()->input_dim(); }
Index ChainMap::output_dim() const { return stages_.back()->output_dim(); }

Vec ChainMap::value(const Vec& x) const {
  Vec v = x;
  for (const auto& s : stages_) v = s->value(v);
  return v;
}

std::pair<Vec, Mat> ChainMap::value_and_pushforward(const Vec& x,
                                                    const Mat& tangent) const {
  Vec v = x;
  Mat t = tangent;
  for (const auto& s : stages_) {
    auto [nv, nt] = s->value_and_pushforward(v, t);
    v = std::move(nv);
    t = std::move(nt);
  }
  return {std::move(v), std::move(t)};
}

} // namespace linrel
