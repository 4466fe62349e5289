#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "t4v/error.hpp"
#include "t4v/numkit.hpp"

namespace t4v::testing {

/// Fresh scratch directory under T4V_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("T4V_TEST_TMP");
  std::filesystem::path dir = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "t4v_tests";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Runs fn and returns the error code it throws; fails the check if nothing is thrown.
template <typename F>
Errc error_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a t4v::Error");
}

/// Central difference of f with respect to x(i, j).
inline double central_difference(const std::function<double()>& f, double& x, double eps = 1e-5) {
  const double saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * eps);
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from dominating.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between an analytic gradient and finite differences of f.
inline double max_gradient_error(const std::function<double()>& f, Matrix& x, const Matrix& analytic,
                                 double eps = 1e-5) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      worst = std::max(worst, relative_error(analytic(i, j), central_difference(f, x(i, j), eps)));
  return worst;
}

// Gaussian elimination with partial pivoting, one right-hand side at a time.
inline Matrix eliminate(Matrix a, Matrix b) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index p = k;
    for (Eigen::Index i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    a.row(k).swap(a.row(p));
    b.row(k).swap(b.row(p));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (Eigen::Index j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) -= f * b(k, j);
    }
  }
  Matrix x(n, b.cols());
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      double s = b(i, j);
      for (Eigen::Index k = i + 1; k < n; ++k) s -= a(i, k) * x(k, j);
      x(i, j) = s / a(i, i);
    }
  }
  return x;
}

/// Direct LDA: row k = Sw^-1 mu_k with Sw pooled over classes, denominator n - c.
/// x holds one sample per row; every class must have a sample.
inline Matrix lda_oracle(const Matrix& x, const std::vector<std::uint32_t>& labels, Eigen::Index c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix mu = Matrix::Zero(c, d);
  std::vector<double> count(static_cast<std::size_t>(c), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) mu(k, j) += x(i, j);
    count[k] += 1.0;
  }
  for (Eigen::Index k = 0; k < c; ++k)
    for (Eigen::Index j = 0; j < d; ++j) mu(k, j) /= count[static_cast<std::size_t>(k)];
  Matrix sw = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = labels[static_cast<std::size_t>(i)];
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) sw(a, b) += (x(i, a) - mu(k, a)) * (x(i, b) - mu(k, b));
  }
  sw /= static_cast<double>(n - c);
  return eliminate(sw, mu.transpose()).transpose();
}

struct ContrastiveOracle {
  double loss = 0.0;
  Matrix d_video;
  Matrix d_text;
  double d_log_scale = 0.0;
};

/// Symmetric InfoNCE over one undivided batch of unit rows, positives on the diagonal.
inline ContrastiveOracle infonce_direct(const Matrix& zv, const Matrix& zt, double log_scale) {
  const double s = std::exp(log_scale);
  const Eigen::Index b = zv.rows();
  const Matrix logits = s * zv * zt.transpose();
  Matrix row_p(b, b), col_p(b, b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double rmax = logits.row(i).maxCoeff(), cmax = logits.col(i).maxCoeff();
    double rsum = 0.0, csum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      rsum += std::exp(logits(i, j) - rmax);
      csum += std::exp(logits(j, i) - cmax);
    }
    for (Eigen::Index j = 0; j < b; ++j) {
      row_p(i, j) = std::exp(logits(i, j) - rmax) / rsum;
      col_p(j, i) = std::exp(logits(j, i) - cmax) / csum;
    }
    loss += 0.5 * ((rmax + std::log(rsum) - logits(i, i)) + (cmax + std::log(csum) - logits(i, i)));
  }
  const Matrix g = 0.5 / static_cast<double>(b) * (row_p + col_p - 2.0 * Matrix::Identity(b, b));
  return {loss / static_cast<double>(b), s * g * zt, s * g.transpose() * zv, (g.array() * logits.array()).sum()};
}

}  // namespace t4v::testing
