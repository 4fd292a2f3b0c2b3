#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "seqmatch/numstat/covariance.hpp"
#include "seqmatch/rng.hpp"

namespace seqmatch {

enum class Arm : std::uint8_t { treatment, control };

constexpr Arm opposite(Arm arm) { return arm == Arm::treatment ? Arm::control : Arm::treatment; }
constexpr char arm_code(Arm arm) { return arm == Arm::treatment ? 'T' : 'C'; }
/// Accepts "T" / "C" (case-insensitive).
std::optional<Arm> parse_arm(std::string_view text);

struct EngineConfig {
  Eigen::Index p = 1;
  std::int64_t n_target = 1;
  double lambda = 0.10;
  /// Eigenvalue cutoff for the covariance pseudoinverse; negative selects
  /// the default relative cutoff.
  double pinv_tolerance = -1.0;

  /// Throws std::invalid_argument on p < 1, n_target < 1, or lambda outside (0, 1).
  void validate() const;
};

struct Subject {
  std::int64_t id = 0;  // arrival order, 1-based
  Eigen::VectorXd covariates;
  std::optional<Arm> arm;
  std::optional<std::int64_t> partner;
};

struct AllocationDecision {
  std::int64_t subject_id = 0;
  Arm arm = Arm::treatment;
  bool matched = false;
  std::optional<std::int64_t> partner;
  // Present whenever the reservoir was searched, matched or not.
  std::optional<double> min_stat;
  std::optional<double> threshold;
};

/// Half the squared Mahalanobis distance, (x_a - x_b)' S_inv (x_a - x_b) / 2.
double mahalanobis_stat(const Eigen::Ref<const Eigen::VectorXd>& x_a, const Eigen::Ref<const Eigen::VectorXd>& x_b,
                        const Eigen::Ref<const Eigen::MatrixXd>& s_inv);

/// Match cutoff p(t-1)/(t-p) * F^{-1}_{p,t-p}(lambda). Requires t > p.
double match_threshold(Eigen::Index p, std::int64_t t, double lambda);

struct MatchSearch {
  std::optional<std::size_t> best;  // index into the candidate list
  double min_stat = 0.0;
  double threshold = 0.0;
  bool accepted = false;
};

/// Statistics closer than this (relative above 1) count as tied.
inline constexpr double kTieTolerance = 1e-10;

/// Scan candidates for the smallest statistic; ties go to the earliest
/// candidate in list order. Accepted when min_stat <= threshold.
MatchSearch search_reservoir(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const std::vector<const Eigen::VectorXd*>& candidates,
                             const Eigen::Ref<const Eigen::MatrixXd>& s_inv, double threshold);

struct TrialSplit {
  std::vector<std::pair<Subject, Subject>> pairs;  // (treatment, control)
  std::vector<Subject> reservoir;
};

/// The sequential matching allocator: every arrival is either matched to
/// the closest reservoir member (and given the opposite arm) or randomized
/// into the reservoir.
class TrialState {
 public:
  /// Everything needed to rebuild a state exactly (used by snapshots).
  struct Parts {
    EngineConfig config;
    CounterRng rng;
    numstat::CovAccumulator cov;
    std::vector<Subject> subjects;
    std::vector<std::int64_t> reservoir;
    std::vector<std::pair<std::int64_t, std::int64_t>> matches;
  };

  TrialState(EngineConfig config, std::uint64_t seed);
  /// Validates all structural invariants; throws std::invalid_argument.
  explicit TrialState(Parts parts);

  /// Throws DimensionMismatch for wrong dim(x) and StateError once complete.
  AllocationDecision allocate(const Eigen::Ref<const Eigen::VectorXd>& x);

  /// Pairs oriented treatment-first plus the remaining reservoir. Throws
  /// StateError while t < n_target.
  TrialSplit finalize() const;
  /// Same split for a trial still in progress.
  TrialSplit current_split() const;

  const EngineConfig& config() const { return config_; }
  std::int64_t t() const { return static_cast<std::int64_t>(subjects_.size()); }
  bool complete() const { return t() >= config_.n_target; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(std::int64_t id) const;
  const std::vector<std::int64_t>& reservoir() const { return reservoir_; }
  /// (entrant id, partner id) in match order.
  const std::vector<std::pair<std::int64_t, std::int64_t>>& matches() const { return matches_; }
  const numstat::CovAccumulator& cov() const { return cov_; }
  const CounterRng& rng() const { return rng_; }

 private:
  Arm randomize_into_reservoir(Subject& subject);

  EngineConfig config_;
  CounterRng rng_;
  numstat::CovAccumulator cov_;
  std::vector<Subject> subjects_;
  std::vector<std::int64_t> reservoir_;
  std::vector<std::pair<std::int64_t, std::int64_t>> matches_;
};

}  // namespace seqmatch
