#pragma once

#include "uqbench/core.hpp"

namespace uqbench {

struct JitteredCholesky {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;  // amount added to the diagonal, 0 if none was needed
};

/// Cholesky of a symmetric matrix, adding diagonal jitter when the plain
/// factorization fails. The ladder starts at 1e-10 * mean(diag) and grows by
/// 10x up to 1e-4 * mean(diag).
inline JitteredCholesky cholesky_with_jitter(const MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n == 0 || matrix.cols() != n) throw DimensionMismatch("Cholesky needs a non-empty square matrix");

  JitteredCholesky out;
  out.llt.compute(matrix);
  if (out.llt.info() == Eigen::Success && (out.llt.matrixLLT().diagonal().array() > 0.0).all()) {
    return out;
  }

  const double mean_diag = matrix.diagonal().mean();
  const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
  for (double factor = 1e-10; factor <= 1e-4 * (1.0 + 1e-9); factor *= 10.0) {
    MatrixXd shifted = matrix;
    shifted.diagonal().array() += factor * scale;
    out.llt.compute(shifted);
    if (out.llt.info() == Eigen::Success && (out.llt.matrixLLT().diagonal().array() > 0.0).all()) {
      out.jitter = factor * scale;
      return out;
    }
  }
  throw CholeskyFailure("matrix is not positive definite even with jitter " + std::to_string(1e-4 * scale));
}

}  // namespace uqbench
