#pragma once

#include <Eigen/Dense>

#include "varcomp/core.hpp"

namespace varcomp {

// Symmetric square root of a PSD matrix via eigendecomposition; eigenvalues
// below zero (numerical noise) are clipped.
inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& g) {
  if (g.rows() != g.cols()) throw Error("matrix_sqrt_psd: matrix is not square");
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + g.cwiseAbs().maxCoeff()))
    throw Error("matrix_sqrt_psd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  const double lambda_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
  if (es.eigenvalues().minCoeff() < -tol_psd * std::max(lambda_max, 1.0))
    throw Error("matrix_sqrt_psd: matrix is not positive semi-definite");
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Square root that silently clips negative eigenvalues; used by finite
// differencing near the PSD boundary where perturbed matrices may dip
// slightly outside the cone.
inline Eigen::MatrixXd matrix_sqrt_clipped(const Eigen::MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (g + g.transpose()));
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Clip eigenvalues below floor_rel * lambda_max up to that floor.
// Returns whether clipping changed anything.
inline bool nearest_psd_clip(Eigen::MatrixXd& m, double floor_rel = 1e-8) {
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const double lambda_max = es.eigenvalues().maxCoeff();
  const double floor = floor_rel * std::max(lambda_max, 0.0);
  if (es.eigenvalues().minCoeff() >= floor) {
    m = std::move(sym);
    return false;
  }
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(floor);
  m = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  return true;
}

}  // namespace varcomp
