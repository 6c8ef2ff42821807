#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "linrel/types.hpp"

namespace linrel {

/// A deterministic vector function with exact derivative propagation. The
/// evaluation context (frozen weights, prompt tokens, ...) is captured by the
/// concrete map; evaluation itself must be pure, so concurrent calls on
/// different inputs are safe.
class DifferentiableMap {
public:
  virtual ~DifferentiableMap() = default;

  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;

  virtual Vec value(const Vec& x) const = 0;

  /// Returns (f(x), J_f(x) * tangent). `tangent` has input_dim rows; each
  /// column is pushed forward exactly (accumulated derivative products, no
  /// finite differences).
  virtual std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                                    const Mat& tangent) const = 0;
};

/// Exact Jacobian, rows indexed by output component. Deterministic.
Mat jacobian(const DifferentiableMap& f, const Vec& x);

/// Central-difference Jacobian, column j = (f(x+h e_j) - f(x-h e_j)) / 2h.
/// The independent oracle every exact Jacobian in this project is checked
/// against.
Mat finite_diff_jacobian(const DifferentiableMap& f, const Vec& x, double h);

// ---- primitive maps, composable into test networks ----

class AffineMap final : public DifferentiableMap {
public:
  AffineMap(Mat a, Vec c);
  Index input_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;
  const Mat& matrix() const { return a_; }
  const Vec& offset() const { return c_; }

private:
  Mat a_;
  Vec c_;
};

class IdentityMap final : public DifferentiableMap {
public:
  explicit IdentityMap(Index dim) : dim_(dim) {}
  Index input_dim() const override { return dim_; }
  Index output_dim() const override { return dim_; }
  Vec value(const Vec& x) const override { return x; }
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override {
    return {x, tangent};
  }

private:
  Index dim_;
};

class LayerNormMap final : public DifferentiableMap {
public:
  LayerNormMap(Vec gain, Vec bias, double eps);
  Index input_dim() const override { return gain_.size(); }
  Index output_dim() const override { return gain_.size(); }
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;

private:
  Vec gain_, bias_;
  double eps_;
};

class GeluMap final : public DifferentiableMap {
public:
  explicit GeluMap(Index dim) : dim_(dim) {}
  Index input_dim() const override { return dim_; }
  Index output_dim() const override { return dim_; }
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;

private:
  Index dim_;
};

class SoftmaxMap final : public DifferentiableMap {
public:
  explicit SoftmaxMap(Index dim) : dim_(dim) {}
  Index input_dim() const override { return dim_; }
  Index output_dim() const override { return dim_; }
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;

private:
  Index dim_;
};

/// stages[0] runs first.
class ChainMap final : public DifferentiableMap {
public:
  explicit ChainMap(std::vector<std::shared_ptr<const DifferentiableMap>> stages);
  Index input_dim() const override;
  Index output_dim() const override;
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;

private:
  std::vector<std::shared_ptr<const DifferentiableMap>> stages_;
};

} // namespace linrel
