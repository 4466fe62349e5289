#pragma once

// Dense numerics shared by every module. Everything here is a pure function of its
// inputs (plus the explicit Rng), templated on the Eigen scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "t4v/error.hpp"
#include "t4v/rng.hpp"

namespace t4v {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kQrPivotTolerance = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-10;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// i.i.d. standard normal entries, drawn in row-major order.
template <typename Scalar = double>
MatrixX<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  if (rows < 1 || cols < 1) {
    fail(Errc::dimension, "numkit", "gaussian_matrix needs rows, cols >= 1");
  }
  MatrixX<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = static_cast<Scalar>(rng.normal());
  return out;
}

/// Orthonormalizes the row space of `m` (rows <= cols). Householder QR of m^T, with the
/// sign of each column of Q chosen so that diag(R) >= 0; returns Q^T.
template <typename Derived>
MatrixX<typename Derived::Scalar> qr_row_orthogonalize(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index rows = m.rows(), cols = m.cols();
  if (rows < 1 || cols < rows) {
    std::ostringstream os;
    os << "qr_row_orthogonalize needs cols >= rows >= 1, got " << rows << "x" << cols;
    fail(Errc::dimension, "numkit", os.str());
  }
  const MatrixX<Scalar> mt = m.transpose();
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(mt);
  const auto& packed = qr.matrixQR();
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(cols, rows);
  for (Eigen::Index j = 0; j < rows; ++j) {
    const Scalar pivot = packed(j, j);
    if (std::abs(pivot) < kQrPivotTolerance) {
      std::ostringstream os;
      os << "row " << j << " is numerically dependent (|pivot| = " << std::abs(pivot) << ")";
      fail(Errc::rank, "numkit", os.str());
    }
    if (pivot < Scalar(0)) q.col(j) = -q.col(j);
  }
  return q.transpose();
}

/// Solves a x = b for symmetric positive definite a (Cholesky).
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> solve_spd(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != a.cols() || b.rows() != a.rows() || a.rows() == 0) {
    fail(Errc::dimension, "numkit", "solve_spd needs square a and b with matching rows");
  }
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance) {
    fail(Errc::not_positive_definite, "numkit", "matrix is not symmetric");
  }
  Eigen::LLT<MatrixX<Scalar>> llt(a);
  if (llt.info() != Eigen::Success) {
    fail(Errc::not_positive_definite, "numkit", "non-positive pivot in Cholesky factorization");
  }
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!(l(i, i) > Scalar(0)) || !std::isfinite(l(i, i))) {
      fail(Errc::not_positive_definite, "numkit", "non-positive pivot in Cholesky factorization");
    }
  }
  MatrixX<Scalar> x = llt.solve(b);
  if (!x.allFinite()) fail(Errc::numeric, "numkit", "solve_spd produced non-finite values");
  return x;
}

/// out(i, j) = cos(a_i, b_j).
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> cosine_rows(const Eigen::MatrixBase<DerivedA>& a,
                                               const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.cols()) fail(Errc::dimension, "numkit", "cosine_rows column mismatch");
  const auto na = a.rowwise().norm().eval();
  const auto nb = b.rowwise().norm().eval();
  for (Eigen::Index i = 0; i < na.size(); ++i)
    if (!(na(i) > Scalar(0))) fail(Errc::degenerate_row, "numkit", "zero-norm row " + std::to_string(i) + " in a");
  for (Eigen::Index i = 0; i < nb.size(); ++i)
    if (!(nb(i) > Scalar(0))) fail(Errc::degenerate_row, "numkit", "zero-norm row " + std::to_string(i) + " in b");
  MatrixX<Scalar> out = (na.cwiseInverse().asDiagonal() * (a * b.transpose())) * nb.cwiseInverse().asDiagonal();
  return out.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  MatrixX<typename Derived::Scalar> out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto n = out.row(i).norm();
    if (!(n > 0)) fail(Errc::degenerate_row, "numkit", "zero-norm row " + std::to_string(i));
    out.row(i) /= n;
  }
  return out;
}

}  // namespace t4v
