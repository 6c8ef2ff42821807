// Independent reference implementations used only to check the production
// code. These deliberately avoid the library's numeric routines: the SVD is a
// hand-rolled one-sided Jacobi, the least squares goes through normal
// equations, the correlation is the naive two-pass formula.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct SvdResult {
  Mat u;
  Vec sigma; // descending
  Mat v;
};

// One-sided Jacobi (Hestenes) SVD for square matrices: rotate column pairs of
// A until they are mutually orthogonal, accumulate rotations into V, read off
// sigma and U from the resulting columns.
inline SvdResult jacobi_svd(const Mat& a_in) {
  const Eigen::Index d = a_in.rows();
  Mat a = a_in;
  Mat v = Mat::Identity(d, d);

  const double eps = 1e-14;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < d - 1; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta + 1e-300));
        if (std::abs(gamma) < eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < d; ++r) {
          const double ap = a(r, p), aq = a(r, q);
          a(r, p) = c * ap - s * aq;
          a(r, q) = s * ap + c * aq;
          const double vp = v(r, p), vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (off < eps) break;
  }

  SvdResult out;
  out.sigma = Vec(d);
  out.u = Mat::Zero(d, d);
  out.v = v;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double norm = a.col(i).norm();
    out.sigma[i] = norm;
    if (norm > 0.0) out.u.col(i) = a.col(i) / norm;
  }
  // sort descending, carrying U and V columns along
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&out](Eigen::Index x, Eigen::Index y) { return out.sigma[x] > out.sigma[y]; });
  SvdResult sorted;
  sorted.sigma = Vec(d);
  sorted.u = Mat(d, d);
  sorted.v = Mat(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    sorted.sigma[i] = out.sigma[order[static_cast<std::size_t>(i)]];
    sorted.u.col(i) = out.u.col(order[static_cast<std::size_t>(i)]);
    sorted.v.col(i) = out.v.col(order[static_cast<std::size_t>(i)]);
  }
  return sorted;
}

// Truncated pseudoinverse from the Jacobi SVD. The pseudoinverse itself is
// sign-convention free, so it compares directly against any SVD route.
inline Mat truncated_pinv(const Mat& w, int rank) {
  const SvdResult svd = jacobi_svd(w);
  const Eigen::Index d = w.rows();
  Mat out = Mat::Zero(d, d);
  for (int i = 0; i < rank; ++i) {
    if (svd.sigma[i] <= 0.0) continue;
    out += (svd.v.col(i) * svd.u.col(i).transpose()) / svd.sigma[i];
  }
  return out;
}

// Least squares o ~= W s + b via the normal equations of the homogeneous
// design [s; 1]. Needs a well-conditioned, over-determined system.
inline std::pair<Mat, Vec> normal_equation_fit(
    std::span<const std::pair<Vec, Vec>> pairs) {
  const Eigen::Index d_in = pairs[0].first.size();
  const Eigen::Index d_out = pairs[0].second.size();
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  Mat x(d_in + 1, n);
  Mat y(d_out, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i).head(d_in) = pairs[static_cast<std::size_t>(i)].first;
    x(d_in, i) = 1.0;
    y.col(i) = pairs[static_cast<std::size_t>(i)].second;
  }
  const Mat gram = x * x.transpose();
  const Mat coeffs = gram.ldlt().solve(x * y.transpose()).transpose();
  return {coeffs.leftCols(d_in), coeffs.col(d_in)};
}

// Naive two-pass Pearson.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

} // namespace oracles
