#pragma once

#include <Eigen/Core>

namespace seqmatch::numstat {

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigendecomposition.
/// Eigenvalues with |value| <= tolerance are treated as zero. A negative
/// tolerance selects the default p * machine-epsilon * max|eigenvalue|.
Eigen::MatrixXd pinv(const Eigen::Ref<const Eigen::MatrixXd>& m, double tolerance = -1.0);

/// Numerical rank of a symmetric matrix under the same cutoff rule as pinv.
Eigen::Index symmetric_rank(const Eigen::Ref<const Eigen::MatrixXd>& m, double tolerance = -1.0);

struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd coefficient_variances;
  double residual_variance = 0.0;  // NaN when df_residual == 0
  Eigen::Index df_residual = 0;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

/// Least squares through the pseudoinverse of X'X, so column-deficient designs
/// yield the minimum-norm solution and rank-adjusted residual df.
OlsFit ols(const Eigen::Ref<const Eigen::MatrixXd>& design, const Eigen::Ref<const Eigen::VectorXd>& response);

}  // namespace seqmatch::numstat
