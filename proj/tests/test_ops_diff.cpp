#include <doctest.h>

#include <cmath>
#include <memory>

#include "linrel/diff.hpp"
#include "linrel/errors.hpp"
#include "linrel/ops.hpp"
#include "linrel/rng.hpp"
#include "linrel/tensor.hpp"

using namespace linrel;

namespace {

Vec random_vec(Rng& rng, Index n, double scale = 1.0) {
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

Mat random_mat(Rng& rng, Index r, Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

double max_normalized_diff(const Mat& a, const Mat& b) {
  return ((a - b).array().abs() / (1.0 + b.array().abs())).maxCoeff();
}

// scalar map f(x) = x^2, for the textbook finite-difference check
struct SquareMap final : DifferentiableMap {
  Index input_dim() const override { return 1; }
  Index output_dim() const override { return 1; }
  Vec value(const Vec& x) const override {
    Vec y(1);
    y[0] = x[0] * x[0];
    return y;
  }
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x, const Mat& t) const override {
    return {value(x), 2.0 * x[0] * t};
  }
};

struct BlowUpMap final : DifferentiableMap {
  Index input_dim() const override { return 2; }
  Index output_dim() const override { return 2; }
  Vec value(const Vec& x) const override {
    Vec y = x;
    y[1] = 1.0 / x[1]; // infinite at x[1] = 0
    return y;
  }
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x, const Mat& t) const override {
    return {value(x), t};
  }
};

} // namespace

TEST_CASE("layer_norm constant input maps to bias") {
  const Vec x = Vec::Constant(3, 1.0);
  const Vec y = layer_norm(x, Vec::Ones(3), Vec::Zero(3), 1e-5);
  CHECK(y.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm leaves an already-normalized vector fixed as eps -> 0") {
  Vec x(2);
  x << 1.0, -1.0;
  const Vec y = layer_norm(x, Vec::Ones(2), Vec::Zero(2), 1e-14);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm is scale invariant as eps -> 0") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = random_vec(rng, 16);
    const Vec a = layer_norm(x, Vec::Ones(16), Vec::Zero(16), 1e-14);
    const Vec b = layer_norm(Vec(2.0 * x), Vec::Ones(16), Vec::Zero(16), 1e-14);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("layer_norm rejects mismatched lengths and bad eps") {
  CHECK_THROWS_AS(layer_norm(Vec::Ones(3), Vec::Ones(2), Vec::Zero(3), 1e-5),
                  ContractError);
  CHECK_THROWS_AS(layer_norm(Vec::Ones(3), Vec::Ones(3), Vec::Zero(3), 0.0),
                  ContractError);
}

TEST_CASE("softmax symmetry and stability") {
  Vec x(2);
  x << 0.0, 0.0;
  const Vec p = softmax(x);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

  Vec big(2);
  big << 1000.0, 0.0;
  const Vec q = softmax(big);
  CHECK(q.allFinite());
  CHECK(std::abs(q[0] - 1.0) < 1e-12);
  CHECK(std::abs(q[1]) < 1e-12);
}

TEST_CASE("softmax outputs a distribution and preserves the argmax") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec x = random_vec(rng, 1 + rng.uniform_int(12), 5.0);
    const Vec p = softmax(x);
    CHECK(p.minCoeff() > 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    Index ax = 0, ap = 0;
    x.maxCoeff(&ax);
    p.maxCoeff(&ap);
    CHECK(ax == ap);
  }
}

TEST_CASE("jacobian of the identity map is the identity matrix") {
  const IdentityMap f(3);
  Vec x(3);
  x << 1.0, 2.0, 3.0;
  const Mat j = jacobian(f, x);
  CHECK((j - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian of an affine map returns the matrix exactly") {
  Mat a(2, 2);
  a << 2.0, 0.0, 0.0, 3.0;
  Vec c(2);
  c << 0.5, -1.0;
  const AffineMap f(a, c);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat j = jacobian(f, random_vec(rng, 2));
    CHECK((j - a).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("jacobian validates the input length") {
  const IdentityMap f(3);
  CHECK_THROWS_AS(jacobian(f, Vec::Ones(4)), ContractError);
}

TEST_CASE("finite_diff_jacobian matches the known derivative of x^2") {
  const SquareMap f;
  Vec x(1);
  x << 2.0;
  const Mat j = finite_diff_jacobian(f, x, 1e-4);
  CHECK(std::abs(j(0, 0) - 4.0) < 1e-7);
}

TEST_CASE("finite_diff_jacobian is exact for linear maps") {
  Rng rng(17);
  const Mat a = random_mat(rng, 4, 4);
  const AffineMap f(a, Vec::Zero(4));
  const Mat j = finite_diff_jacobian(f, random_vec(rng, 4), 1e-3);
  CHECK((j - a).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("finite_diff_jacobian rejects h <= 0 and reports non-finite columns") {
  const SquareMap f;
  CHECK_THROWS_AS(finite_diff_jacobian(f, Vec::Ones(1), 0.0), ContractError);

  const BlowUpMap g;
  Vec x(2);
  x << 1.0, 1e-3; // x[1] - h crosses zero: 1/x blows up inside the stencil
  CHECK_THROWS_WITH_AS(finite_diff_jacobian(g, x, 1e-3),
                       doctest::Contains("column 1"), NumericError);
}

TEST_CASE("pushforward of layer_norm, softmax, gelu agrees with finite differences") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec gain = random_vec(rng, 8);
    const Vec bias = random_vec(rng, 8);
    const LayerNormMap ln(gain, bias, 1e-5);
    const Vec x = random_vec(rng, 8);
    CHECK(max_normalized_diff(jacobian(ln, x), finite_diff_jacobian(ln, x, 1e-4)) < 1e-6);

    const SoftmaxMap sm(8);
    CHECK(max_normalized_diff(jacobian(sm, x), finite_diff_jacobian(sm, x, 1e-4)) < 1e-6);

    const GeluMap ge(8);
    CHECK(max_normalized_diff(jacobian(ge, x), finite_diff_jacobian(ge, x, 1e-4)) < 1e-6);
  }
}

TEST_CASE("composite maps: exact jacobian matches finite differences on 100 seeds") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const Index d = 6;
    std::vector<std::shared_ptr<const DifferentiableMap>> stages;
    stages.push_back(std::make_shared<AffineMap>(random_mat(rng, d, d), random_vec(rng, d)));
    stages.push_back(std::make_shared<LayerNormMap>(random_vec(rng, d), random_vec(rng, d),
                                                    1e-5));
    stages.push_back(std::make_shared<GeluMap>(d));
    stages.push_back(std::make_shared<AffineMap>(random_mat(rng, d, d), random_vec(rng, d)));
    if (seed % 2 == 0) stages.push_back(std::make_shared<SoftmaxMap>(d));
    const ChainMap chain(std::move(stages));

    const Vec x = random_vec(rng, d);
    const Mat exact = jacobian(chain, x);
    const Mat approx = finite_diff_jacobian(chain, x, 1e-3);
    CHECK(((exact - approx).array().abs() / (1.0 + approx.array().abs())).maxCoeff() <
          1e-4);
  }
}

TEST_CASE("jacobian of an affine composition does not depend on the input point") {
  Rng rng(31);
  const Index d = 5;
  std::vector<std::shared_ptr<const DifferentiableMap>> stages;
  stages.push_back(std::make_shared<AffineMap>(random_mat(rng, d, d), random_vec(rng, d)));
  stages.push_back(std::make_shared<AffineMap>(random_mat(rng, d, d), random_vec(rng, d)));
  stages.push_back(std::make_shared<AffineMap>(random_mat(rng, d, d), random_vec(rng, d)));
  const ChainMap chain(std::move(stages));

  const Mat j1 = jacobian(chain, random_vec(rng, d));
  const Mat j2 = jacobian(chain, random_vec(rng, d));
  CHECK((j1 - j2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tensor validation rejects bad shapes and non-finite payloads") {
  CHECK_THROWS_AS(Tensor::checked("t", {2, 2}, {1.0, 2.0, 3.0}), InputError);
  CHECK_THROWS_AS(Tensor::checked("t", {0}, {}), InputError);
  CHECK_THROWS_AS(Tensor::checked("t", {2}, {1.0, std::nan("")}), InputError);
  const Tensor ok = Tensor::checked("t", {2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Mat m = ok.to_matrix();
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);
}
