#pragma once

#include <Eigen/Core>

namespace seqmatch::simlab {

/// Idealized reservoir occupancy chain: the unit interval is cut into K
/// equal cells, two arrivals in one cell match, and the chain moves once
/// per pair of arrivals. State s in {0, ..., K/2} means 2s cells hold an
/// unmatched item.
struct ReservoirChain {
  int k = 2;
  Eigen::MatrixXd transition;  // (K/2 + 1) x (K/2 + 1), rows sum to 1
};

/// Throws DomainError unless K is even and K >= 2.
ReservoirChain chain_transition(int k);

/// K = round(1 / lambda); throws DomainError when that K is odd.
ReservoirChain chain_for_lambda(double lambda);

struct ChainStationary {
  Eigen::VectorXd distribution;
  double mean_state = 0.0;  // E[s]
  double mean_items = 0.0;  // E[2s], the long-run mean reservoir size
};

/// Solves pi P = pi, sum(pi) = 1 directly. Throws NumericalError when the
/// solution's residual exceeds 1e-10.
ChainStationary chain_stationary(const ReservoirChain& chain);

}  // namespace seqmatch::simlab
