#pragma once

#include <Eigen/Core>

namespace tubempc {

/// Stabilizing solution P of A'P + PA - P B R^-1 B' P + Q = 0, computed with
/// the scaled matrix-sign iteration on the Hamiltonian. Throws
/// StabilizabilityError when no stabilizing solution exists.
Eigen::MatrixXd solve_care(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// Residual norm of the continuous algebraic Riccati equation at P.
double care_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P);

}  // namespace tubempc
