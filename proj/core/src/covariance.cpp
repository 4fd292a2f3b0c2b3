#include "seqmatch/numstat/covariance.hpp"

#include <string>
#include <utility>

#include "seqmatch/error.hpp"

namespace seqmatch::numstat {

CovAccumulator::CovAccumulator(Eigen::Index dim)
    : mean_(Eigen::VectorXd::Zero(dim)), scatter_(Eigen::MatrixXd::Zero(dim, dim)) {}

CovAccumulator::CovAccumulator(std::int64_t count, Eigen::VectorXd mean, Eigen::MatrixXd scatter)
    : count_(count), mean_(std::move(mean)), scatter_(std::move(scatter)) {
  if (count_ < 0 || scatter_.rows() != mean_.size() || scatter_.cols() != mean_.size()) {
    throw DimensionMismatch("inconsistent covariance accumulator state");
  }
}

void CovAccumulator::update(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != dim()) {
    throw DimensionMismatch("covariate vector has dimension " + std::to_string(x.size()) +
                            ", accumulator expects " + std::to_string(dim()));
  }
  ++count_;
  const Eigen::VectorXd before = x - mean_;
  mean_ += before / static_cast<double>(count_);
  const Eigen::VectorXd after = x - mean_;
  // Symmetrized rank-one update keeps the scatter exactly symmetric.
  scatter_ += 0.5 * (before * after.transpose() + after * before.transpose());
}

Eigen::MatrixXd CovAccumulator::sample_covariance() const {
  if (count_ < 2) throw InsufficientData("sample covariance needs at least two observations");
  return scatter_ / static_cast<double>(count_ - 1);
}

}  // namespace seqmatch::numstat
