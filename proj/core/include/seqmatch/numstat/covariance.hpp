#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace seqmatch::numstat {

/// Running mean and scatter matrix (sum of outer products of deviations),
/// updated with the multivariate Welford recurrence. Append-only.
class CovAccumulator {
 public:
  CovAccumulator() = default;
  explicit CovAccumulator(Eigen::Index dim);
  CovAccumulator(std::int64_t count, Eigen::VectorXd mean, Eigen::MatrixXd scatter);

  /// Throws DimensionMismatch if x.size() != dim().
  void update(const Eigen::Ref<const Eigen::VectorXd>& x);

  Eigen::Index dim() const { return mean_.size(); }
  std::int64_t count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& scatter() const { return scatter_; }

  /// scatter / (count - 1). Throws InsufficientData when count < 2.
  Eigen::MatrixXd sample_covariance() const;

 private:
  std::int64_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
};

}  // namespace seqmatch::numstat
