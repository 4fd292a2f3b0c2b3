#include "seqmatch/numstat/linalg.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>

#include "seqmatch/error.hpp"

namespace seqmatch::numstat {
namespace {

double cutoff_for(const Eigen::VectorXd& eigenvalues, Eigen::Index dim, double tolerance) {
  if (tolerance >= 0.0) return tolerance;
  const double largest = eigenvalues.size() > 0 ? eigenvalues.cwiseAbs().maxCoeff() : 0.0;
  return static_cast<double>(dim) * std::numeric_limits<double>::epsilon() * largest;
}

void require_square(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch("expected a square matrix, got " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()));
  }
}

}  // namespace

Eigen::MatrixXd pinv(const Eigen::Ref<const Eigen::MatrixXd>& m, double tolerance) {
  require_square(m);
  const Eigen::Index p = m.rows();
  if (p == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();
  const double cutoff = cutoff_for(values, p, tolerance);
  Eigen::VectorXd inverted(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    inverted[i] = std::fabs(values[i]) > cutoff ? 1.0 / values[i] : 0.0;
  }
  const Eigen::MatrixXd& vectors = solver.eigenvectors();
  Eigen::MatrixXd result = vectors * inverted.asDiagonal() * vectors.transpose();
  return 0.5 * (result + result.transpose());
}

Eigen::Index symmetric_rank(const Eigen::Ref<const Eigen::MatrixXd>& m, double tolerance) {
  require_square(m);
  if (m.rows() == 0) return 0;
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();
  const double cutoff = cutoff_for(values, m.rows(), tolerance);
  return (values.cwiseAbs().array() > cutoff).count();
}

OlsFit ols(const Eigen::Ref<const Eigen::MatrixXd>& design, const Eigen::Ref<const Eigen::VectorXd>& response) {
  if (design.rows() != response.size()) {
    throw DimensionMismatch("design has " + std::to_string(design.rows()) + " rows but response has " +
                            std::to_string(response.size()));
  }
  if (design.rows() < 1) throw InsufficientData("ols needs at least one observation");

  const Eigen::MatrixXd gram = design.transpose() * design;
  const Eigen::MatrixXd gram_inv = pinv(gram);

  OlsFit fit;
  fit.rank = symmetric_rank(gram);
  fit.rank_deficient = fit.rank < design.cols();
  fit.coefficients = gram_inv * (design.transpose() * response);
  fit.df_residual = design.rows() - fit.rank;

  const Eigen::VectorXd residuals = response - design * fit.coefficients;
  if (fit.df_residual > 0) {
    fit.residual_variance = residuals.squaredNorm() / static_cast<double>(fit.df_residual);
  } else {
    fit.residual_variance = std::numeric_limits<double>::quiet_NaN();
  }
  fit.coefficient_variances = (fit.residual_variance * gram_inv.diagonal().array()).max(0.0).matrix();
  if (fit.df_residual == 0) {
    fit.coefficient_variances.setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  return fit;
}

}  // namespace seqmatch::numstat
