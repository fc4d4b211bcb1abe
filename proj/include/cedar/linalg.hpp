#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cedar/common.hpp"

namespace cedar {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Cholesky of a symmetric positive definite matrix; `what` names the matrix
// in the failure diagnostic (matrices are never silently regularized).
inline Eigen::LLT<MatrixXd> spd_llt(const MatrixXd& A, const char* what) {
  Eigen::LLT<MatrixXd> llt(A);
  require(llt.info() == Eigen::Success, what,
          " is not positive definite (Cholesky failed)");
  return llt;
}

inline MatrixXd spd_solve(const MatrixXd& A, const MatrixXd& B,
                          const char* what) {
  return spd_llt(A, what).solve(B);
}

inline MatrixXd spd_inverse(const MatrixXd& A, const char* what) {
  MatrixXd I = MatrixXd::Identity(A.rows(), A.cols());
  return spd_llt(A, what).solve(I);
}

inline double spd_logdet(const MatrixXd& A, const char* what) {
  auto llt = spd_llt(A, what);
  return 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

// log of the multivariate gamma function Gamma_p(a)
inline double mvlgamma(int p, double a) {
  double v = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int j = 1; j <= p; ++j) v += std::lgamma(a + 0.5 * (1 - j));
  return v;
}

// packed upper triangle (row-major, diagonal included) of a symmetric matrix
inline std::vector<double> pack_upper(const MatrixXd& A) {
  int p = static_cast<int>(A.rows());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(p) * (p + 1) / 2);
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) out.push_back(A(i, j));
  return out;
}

inline MatrixXd unpack_upper(int p, const double* v) {
  MatrixXd A(p, p);
  std::size_t k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) {
      A(i, j) = v[k];
      A(j, i) = v[k];
      ++k;
    }
  return A;
}

inline double rel_change(double next, double prev) {
  return std::fabs(next - prev) / (1.0 + std::fabs(prev));
}

inline double rel_change(const VectorXd& next, const VectorXd& prev) {
  return (next - prev).cwiseAbs().maxCoeff() /
         (1.0 + prev.cwiseAbs().maxCoeff());
}

inline double rel_change(const MatrixXd& next, const MatrixXd& prev) {
  return (next - prev).cwiseAbs().maxCoeff() /
         (1.0 + prev.cwiseAbs().maxCoeff());
}

}  // namespace cedar
