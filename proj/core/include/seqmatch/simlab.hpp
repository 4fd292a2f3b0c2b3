#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "seqmatch/engine.hpp"
#include "seqmatch/rng.hpp"

namespace seqmatch::simlab {

/// Response surfaces: NL = x1 + x2 + x1^2 + x2^2 + x1*x2, LI = 2*x1 + 2*x2,
/// ZE = 0; each plus beta_T * 1_T and N(0, sigma2_e) noise.
enum class Scenario { nl, li, ze };
enum class AllocatorKind { complete_randomization, efron, stratification, minimization, sequential_matching };
enum class TestKind { classic, linear, exact };

std::string_view to_string(Scenario s);
std::string_view to_string(AllocatorKind a);
std::string_view to_string(TestKind t);
std::optional<Scenario> parse_scenario(std::string_view text);
std::optional<AllocatorKind> parse_allocator(std::string_view text);
std::optional<TestKind> parse_test(std::string_view text);

inline constexpr AllocatorKind kAllAllocators[] = {
    AllocatorKind::complete_randomization, AllocatorKind::efron, AllocatorKind::stratification,
    AllocatorKind::minimization, AllocatorKind::sequential_matching};

struct ScenarioSpec {
  Scenario scenario = Scenario::nl;
  double beta_t = 1.0;
  double sigma2_e = 3.0;
  std::int64_t n = 100;
  double lambda = 0.10;
  std::int64_t replications = 1000;
  std::int64_t mc_draws = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument.
  void validate() const;
};

double covariate_effect(Scenario scenario, double x1, double x2);

/// One simulated experiment: covariates and noise are drawn up front; the
/// response depends on the arm an allocator eventually assigns.
struct SimulatedTrial {
  Scenario scenario = Scenario::nl;
  double beta_t = 0.0;
  Eigen::MatrixXd covariates;  // n x 2
  Eigen::VectorXd noise;

  Eigen::Index size() const { return covariates.rows(); }
  double response(Eigen::Index i, Arm arm) const;
};

SimulatedTrial generate_trial(const ScenarioSpec& spec, CounterRng& rng);

struct AllocationResult {
  std::vector<Arm> arms;
  std::optional<TrialSplit> split;  // sequential matching only
  std::vector<int> blocks;          // stratification only
};

AllocationResult allocate_trial(AllocatorKind kind, const Eigen::MatrixXd& covariates, double lambda,
                                CounterRng& rng);

/// Largest standardized covariate mean difference between arms,
/// max_j |xbar_jT - xbar_jC| / (sqrt(2) * SE_j) with
/// SE_j = sqrt(s2_jT / n_T + s2_jC / n_C). About 0.8 under complete
/// randomization at any n. NaN when an arm has fewer than two subjects.
double balance(const Eigen::MatrixXd& covariates, const std::vector<Arm>& arms);

struct TestOutcome {
  double estimate = 0.0;
  std::optional<double> std_error;
  double p_value = 1.0;
};

/// Analyze one allocated trial with the given test. Sequential matching uses
/// the combined estimators and the structure-respecting exact test; the
/// competitors use the two-sample difference, OLS on 1_T + x (+ block
/// indicators under stratification), and the label-permutation test.
/// Throws InsufficientData / DomainError when the estimator is undefined.
TestOutcome analyze(AllocatorKind kind, TestKind test, const SimulatedTrial& trial, const AllocationResult& allocation,
                    std::int64_t mc_draws, std::uint64_t exact_seed);

/// Normal-approximation 95% interval for a binomial proportion, clipped to [0, 1].
struct Interval {
  double low;
  double high;
};
Interval binomial_ci(std::int64_t successes, std::int64_t trials);

/// var_competitor / var_reference; eff(A vs B) * eff(B vs A) = 1.
double relative_efficiency(double var_competitor, double var_reference);
/// Two-sided F test of equal variances.
double variance_ratio_p_value(double var_a, double var_b, std::int64_t df_a, std::int64_t df_b);

struct CellResult {
  Scenario scenario = Scenario::nl;
  std::int64_t n = 0;
  double lambda = 0.0;
  double beta_t = 0.0;
  AllocatorKind allocator = AllocatorKind::sequential_matching;
  TestKind test = TestKind::classic;
  std::int64_t replications = 0;
  std::int64_t completed = 0;
  std::int64_t excluded = 0;
  bool flagged = false;  // excluded >= 1% of replications
  std::int64_t rejections = 0;
  double rejection_rate = 0.0;
  Interval rejection_ci{0.0, 0.0};
  double mean_estimate = 0.0;
  double empirical_se = 0.0;
  double mean_balance = 0.0;
  /// var(competitor) / var(sequential matching) for the same scenario, n and test.
  std::optional<double> efficiency_vs_sm;
  std::optional<double> efficiency_p_value;
  std::string efficiency_flag;  // "sm_better" / "sm_worse" at 1%, "ns", or empty for SM itself
};

struct SimReport {
  std::vector<CellResult> cells;

  const CellResult* find(Scenario s, std::int64_t n, AllocatorKind a, TestKind t) const;
  void write_csv(std::ostream& out) const;
  void write_summary(std::ostream& out) const;
};

struct GridSpec {
  std::vector<ScenarioSpec> specs;
  std::vector<AllocatorKind> allocators{std::begin(kAllAllocators), std::end(kAllAllocators)};
  std::vector<TestKind> tests{TestKind::classic, TestKind::linear, TestKind::exact};
  unsigned workers = 1;
};

/// Runs every (spec, allocator, test) cell. Replication r of a spec draws
/// its data from a stream derived from (seed, scenario, n, r), so any cell
/// is reproducible on its own and results do not depend on `workers`.
SimReport run_grid(const GridSpec& grid);

}  // namespace seqmatch::simlab
