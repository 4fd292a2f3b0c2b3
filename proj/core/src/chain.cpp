#include "seqmatch/chain.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>

#include "seqmatch/error.hpp"

namespace seqmatch::simlab {

ReservoirChain chain_transition(int k) {
  if (k < 2 || k % 2 != 0) throw DomainError("reservoir chain needs an even K >= 2, got " + std::to_string(k));
  const int top = k / 2;
  const double kd = k;
  const double k2 = kd * kd;
  ReservoirChain chain;
  chain.k = k;
  chain.transition = Eigen::MatrixXd::Zero(top + 1, top + 1);
  for (int s = 0; s <= top; ++s) {
    const double sd = s;
    if (s > 0) chain.transition(s, s - 1) = 2.0 * sd * (2.0 * sd - 1.0) / k2;
    chain.transition(s, s) = (kd * (4.0 * sd + 1.0) - 8.0 * sd * sd) / k2;
    if (s < top) chain.transition(s, s + 1) = (k2 - kd * (4.0 * sd + 1.0) + 2.0 * sd * (2.0 * sd + 1.0)) / k2;
  }
  return chain;
}

ReservoirChain chain_for_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw DomainError("lambda must lie in (0, 1)");
  const double k = 1.0 / lambda;
  const long rounded = std::lround(k);
  if (std::fabs(k - static_cast<double>(rounded)) > 1e-9) {
    throw DomainError("1/lambda must be an integer for the cell chain");
  }
  return chain_transition(static_cast<int>(rounded));
}

ChainStationary chain_stationary(const ReservoirChain& chain) {
  const Eigen::Index n = chain.transition.rows();
  Eigen::MatrixXd a = chain.transition.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b[n - 1] = 1.0;
  const Eigen::VectorXd pi = a.fullPivLu().solve(b);

  const double residual = (chain.transition.transpose() * pi - pi).cwiseAbs().maxCoeff();
  if (!std::isfinite(residual) || residual > 1e-10 || std::fabs(pi.sum() - 1.0) > 1e-10) {
    throw NumericalError("stationary distribution solve did not converge");
  }

  ChainStationary out;
  out.distribution = pi;
  for (Eigen::Index s = 0; s < n; ++s) out.mean_state += static_cast<double>(s) * pi[s];
  out.mean_items = 2.0 * out.mean_state;
  return out;
}

}  // namespace seqmatch::simlab
