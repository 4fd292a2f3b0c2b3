#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "seqmatch/engine.hpp"
#include "seqmatch/rng.hpp"

// Baseline allocation procedures the sequential matcher is compared against.
// None of them look at responses.
namespace seqmatch::competitors {

/// Fair coin.
Arm complete_randomization(CounterRng& rng);

/// Efron's biased coin: P(T) = 1/2 when balanced, `bias` toward the
/// under-allocated arm otherwise.
inline constexpr double kEfronBias = 2.0 / 3.0;
double efron_probability_treatment(std::int64_t n_t, std::int64_t n_c, double bias = kEfronBias);
Arm efron_bcd(std::int64_t n_t, std::int64_t n_c, CounterRng& rng, double bias = kEfronBias);

/// Three-level discretization of a standard-normal covariate at its 1/3 and
/// 2/3 quantiles (about -0.4307 and +0.4307).
class TertileCuts {
 public:
  TertileCuts();
  int level(double x) const { return x < lower_ ? 0 : (x < upper_ ? 1 : 2); }
  double lower() const { return lower_; }
  double upper() const { return upper_; }

 private:
  double lower_;
  double upper_;
};

inline constexpr int kLevels = 3;
inline constexpr int kBlocks = kLevels * kLevels;

/// Stratified allocation over the 3 x 3 grid of two covariates. Within a
/// block assignments alternate; the first arm of each block is a fair coin.
class StratumGrid {
 public:
  /// Block index in [0, 9): 3 * level(x1) + level(x2).
  int block(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Arm allocate(const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng);

  std::int64_t count(int block, Arm arm) const;
  const TertileCuts& cuts() const { return cuts_; }

 private:
  TertileCuts cuts_;
  std::array<std::optional<Arm>, kBlocks> next_{};
  std::array<std::array<std::int64_t, 2>, kBlocks> counts_{};
};

/// Pocock-Simon minimization on the same tertile levels, variance as the
/// imbalance ("D") function, sum over covariates as the total ("G")
/// function, and deterministic assignment to the minimizing arm (ties by a
/// fair coin).
class MinimizationState {
 public:
  struct Scores {
    double if_treatment;
    double if_control;
  };

  /// G for each hypothetical assignment of a subject at x.
  Scores scores(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Arm allocate(const Eigen::Ref<const Eigen::VectorXd>& x, CounterRng& rng);

  std::int64_t count(int covariate, int level, Arm arm) const;
  /// Seed the per-level counts directly (used to set up known states).
  void set_count(int covariate, int level, Arm arm, std::int64_t value);

  /// D function: sample variance of the two arm counts.
  static double imbalance(std::int64_t n_t, std::int64_t n_c);

 private:
  TertileCuts cuts_;
  // counts_[covariate][level][arm]
  std::array<std::array<std::array<std::int64_t, 2>, kLevels>, 2> counts_{};
};

}  // namespace seqmatch::competitors
