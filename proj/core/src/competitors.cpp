#include "seqmatch/competitors.hpp"

#include <stdexcept>

#include "seqmatch/error.hpp"
#include "seqmatch/numstat/distributions.hpp"

namespace seqmatch::competitors {
namespace {

constexpr std::size_t slot(Arm arm) { return arm == Arm::treatment ? 0 : 1; }

void require_two(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != 2) throw DimensionMismatch("stratification and minimization are defined for two covariates");
}

}  // namespace

Arm complete_randomization(CounterRng& rng) { return rng.bernoulli(0.5) ? Arm::treatment : Arm::control; }

double efron_probability_treatment(std::int64_t n_t, std::int64_t n_c, double bias) {
  if (n_t == n_c) return 0.5;
  return n_t < n_c ? bias : 1.0 - bias;
}

Arm efron_bcd(std::int64_t n_t, std::int64_t n_c, CounterRng& rng, double bias) {
  return rng.bernoulli(efron_probability_treatment(n_t, n_c, bias)) ? Arm::treatment : Arm::control;
}

TertileCuts::TertileCuts()
    : lower_(numstat::normal_quantile(1.0 / 3.0)), upper_(numstat::normal_quantile(2.0 / 3.0)) {}

int StratumGrid::block(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  require_two(x);
  return kLevels * cuts_.level(x[0]) + cuts_.level(x[1]);
}

Arm StratumGrid::allocate(const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng) {
  const int b = block(x);
  auto& next = next_[static_cast<std::size_t>(b)];
  if (!next) next = complete_randomization(rng);
  const Arm arm = *next;
  next = opposite(arm);
  ++counts_[static_cast<std::size_t>(b)][slot(arm)];
  return arm;
}

std::int64_t StratumGrid::count(int b, Arm arm) const {
  if (b < 0 || b >= kBlocks) throw std::out_of_range("block index");
  return counts_[static_cast<std::size_t>(b)][slot(arm)];
}

double MinimizationState::imbalance(std::int64_t n_t, std::int64_t n_c) {
  // Sample variance of {n_t, n_c}.
  const double d = static_cast<double>(n_t - n_c);
  return 0.5 * d * d;
}

MinimizationState::Scores MinimizationState::scores(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  require_two(x);
  Scores s{0.0, 0.0};
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& level = counts_[j][static_cast<std::size_t>(cuts_.level(x[static_cast<Eigen::Index>(j)]))];
    s.if_treatment += imbalance(level[0] + 1, level[1]);
    s.if_control += imbalance(level[0], level[1] + 1);
  }
  return s;
}

Arm MinimizationState::allocate(const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng) {
  const Scores s = scores(x);
  Arm arm;
  if (s.if_treatment < s.if_control) {
    arm = Arm::treatment;
  } else if (s.if_control < s.if_treatment) {
    arm = Arm::control;
  } else {
    arm = complete_randomization(rng);
  }
  for (std::size_t j = 0; j < 2; ++j) {
    ++counts_[j][static_cast<std::size_t>(cuts_.level(x[static_cast<Eigen::Index>(j)]))][slot(arm)];
  }
  return arm;
}

std::int64_t MinimizationState::count(int covariate, int level, Arm arm) const {
  return counts_.at(static_cast<std::size_t>(covariate)).at(static_cast<std::size_t>(level))[slot(arm)];
}

void MinimizationState::set_count(int covariate, int level, Arm arm, std::int64_t value) {
  if (value < 0) throw std::invalid_argument("counts are nonnegative");
  counts_.at(static_cast<std::size_t>(covariate)).at(static_cast<std::size_t>(level))[slot(arm)] = value;
}

}  // namespace seqmatch::competitors
