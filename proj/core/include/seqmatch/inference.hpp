#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "seqmatch/estimators.hpp"

namespace seqmatch {

enum class TestMethod { classic_z, ols_z, exact_mc, exact_full };

std::string_view to_string(TestMethod method);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  TestMethod method = TestMethod::classic_z;
  std::optional<std::int64_t> mc_draws;
  std::optional<std::int64_t> configurations;  // exact_full only

  bool reject_at(double alpha) const { return p_value <= alpha; }
};

struct ZTestOptions {
  /// Use a t reference with the estimate's df (m - 1 for the classic
  /// estimator) instead of the standard normal.
  bool conservative_t = false;
};

/// Two-sided test of H0: beta_T = beta0. Throws DomainError when SE is zero.
TestResult z_test(const EffectEstimate& estimate, double beta0, ZTestOptions options = {});

enum class ExactStatistic { classic, ols };
enum class ExactMode { monte_carlo, full };

struct ExactTestOptions {
  ExactMode mode = ExactMode::monte_carlo;
  ExactStatistic statistic = ExactStatistic::classic;
  std::int64_t draws = 1000;
  std::uint64_t seed = 0;
  std::int64_t enumeration_cap = std::int64_t{1} << 20;
  /// Worker threads for the Monte-Carlo draws. Each draw has its own
  /// stream derived from (seed, draw index), so results do not depend on it.
  unsigned workers = 1;
  OlsOptions ols;
};

/// Number of (pair sign, reservoir relabeling) configurations,
/// 2^m * C(n_R, n_RT); nullopt on overflow.
std::optional<std::int64_t> configuration_count(std::int64_t m, std::int64_t n_r, std::int64_t n_rt);

/// Conditional randomization test of H0: beta_T = beta0 that respects the
/// allocation structure: pair orientations are flipped and reservoir labels
/// permuted with n_RT held fixed. beta0 is subtracted from every treatment
/// response first so the null is a sharp additive one.
///
/// Full mode enumerates every configuration (observed one included) and
/// throws std::invalid_argument above enumeration_cap. Monte-Carlo mode
/// reports (1 + #{|b| >= |b_obs|}) / (1 + draws).
TestResult exact_test(const PairedSample& pairs, const ReservoirSample& reservoir, double beta0,
                      const ExactTestOptions& options = {});

}  // namespace seqmatch
