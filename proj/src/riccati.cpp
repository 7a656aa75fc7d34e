#include "tubempc/riccati.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>

#include "tubempc/errors.hpp"

namespace tubempc {

using Eigen::MatrixXd;

double care_residual(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R,
                     const MatrixXd& P) {
  const MatrixXd G = B * R.ldlt().solve(B.transpose());
  return (A.transpose() * P + P * A - P * G * P + Q).norm();
}

MatrixXd solve_care(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
      R.cols() != B.cols()) {
    throw StabilizabilityError("solve_care: inconsistent dimensions");
  }
  const MatrixXd G = B * R.ldlt().solve(B.transpose());

  MatrixXd Z(2 * n, 2 * n);
  Z << A, -G, -Q, -A.transpose();

  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    Eigen::PartialPivLU<MatrixXd> lu(Z);
    const double det = std::abs(lu.determinant());
    if (!(det > 0.0) || !std::isfinite(det)) break;
    const double c = std::pow(det, 1.0 / static_cast<double>(2 * n));
    const MatrixXd next = 0.5 * (Z / c + c * lu.inverse());
    const double change = (next - Z).norm();
    Z = next;
    if (change <= 1e-13 * Z.norm()) {
      converged = true;
      break;
    }
  }
  if (!converged || !Z.allFinite()) {
    throw StabilizabilityError("solve_care: Hamiltonian has eigenvalues on the imaginary axis");
  }

  const MatrixXd W11 = Z.topLeftCorner(n, n);
  const MatrixXd W12 = Z.topRightCorner(n, n);
  const MatrixXd W21 = Z.bottomLeftCorner(n, n);
  const MatrixXd W22 = Z.bottomRightCorner(n, n);
  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd lhs(2 * n, n), rhs(2 * n, n);
  lhs << W12, W22 + I;
  rhs << W11 + I, W21;
  MatrixXd P = lhs.colPivHouseholderQr().solve(-rhs);
  P = 0.5 * (P + P.transpose());

  const MatrixXd closed = A - G * P;
  Eigen::EigenSolver<MatrixXd> es(closed, false);
  if (!P.allFinite() || es.eigenvalues().real().maxCoeff() >= 0.0) {
    throw StabilizabilityError("solve_care: no stabilizing solution (pair not stabilizable)");
  }
  const double scale = std::max(1.0, Q.norm() + A.norm() * P.norm());
  if (care_residual(A, B, Q, R, P) > 1e-8 * scale) {
    throw StabilizabilityError("solve_care: Riccati residual too large");
  }
  return P;
}

}  // namespace tubempc
