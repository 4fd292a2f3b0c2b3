#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seqmatch/engine.hpp"
#include "seqmatch/estimators.hpp"

// Re-running completed randomized trials through the sequential matcher.
// Subjects keep the arm they were actually given; a subject the matcher
// wants on the other arm is dropped.
namespace seqmatch::replay {

struct HistoricalRecord {
  Eigen::VectorXd covariates;
  Arm original_arm = Arm::treatment;
  double response = 0.0;
};

struct ColumnMapping {
  std::vector<std::string> covariates;
  std::string arm;
  std::string response;
  std::string treatment_code = "T";
  std::string control_code = "C";
  char delimiter = ',';
};

/// Missing values ("", "NA", "NaN", ".") and unknown arm codes are rejected
/// with std::invalid_argument naming the line.
std::vector<HistoricalRecord> load_records(std::istream& in, const ColumnMapping& mapping);
std::vector<HistoricalRecord> load_records(const std::filesystem::path& path, const ColumnMapping& mapping);

struct ReplayOptions {
  double lambda = 0.10;
  /// Discarded entrants were observed, so by default they still update the
  /// running covariance and advance t.
  bool discarded_update_covariance = true;
  double pinv_tolerance = -1.0;
};

/// Trace symbols: '.' reservoir entry, 'o' kept match, 'x' discarded match.
/// Each 'o' consumes one earlier '.', so #'.' = n_R + #'o'.
struct ReplayRun {
  std::string trace;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (treatment, control) record indices
  std::vector<std::size_t> reservoir;                      // record indices
  std::int64_t discarded = 0;

  std::int64_t kept_matches() const { return static_cast<std::int64_t>(pairs.size()); }
  std::int64_t match_attempts() const { return kept_matches() + discarded; }
  std::int64_t actual_n() const { return 2 * kept_matches() + static_cast<std::int64_t>(reservoir.size()); }

  /// Retained subset split for the combined estimators.
  AnalysisSamples samples(const std::vector<HistoricalRecord>& records) const;
};

/// Streams `records` in the given order. Consumes no randomness: reservoir
/// entrants keep their recorded arm. Throws std::invalid_argument when
/// empty or dimensions differ.
ReplayRun replay_once(const std::vector<HistoricalRecord>& records, const ReplayOptions& options = {});

/// Two-sample (reservoir-only) classic estimate over all records with their
/// recorded arms; the no-matching baseline.
EffectEstimate baseline_estimate(const std::vector<HistoricalRecord>& records);

struct ReplayRow {
  std::int64_t purported_n = 0;
  std::int64_t runs = 0;
  std::int64_t excluded = 0;  // runs where an estimator was undefined
  double mean_actual_n = 0.0;
  /// Mean over runs of var(baseline on the purported subset) /
  /// SE^2(combined estimator on the retained subset).
  double mean_efficiency = 0.0;
  /// Mean over runs of 1 - 1/efficiency, in percent.
  double reduction_pct = 0.0;
  /// Discarded matches / match attempts, pooled over runs.
  double discard_fraction = 0.0;
  std::vector<std::string> traces;
};

struct ReplayReport {
  std::vector<ReplayRow> rows;
  void write_csv(std::ostream& out) const;
};

struct StudyOptions {
  ReplayOptions replay;
  std::vector<std::int64_t> n_values;
  std::int64_t runs = 200;
  std::uint64_t seed = 0;
  bool keep_traces = false;
  unsigned workers = 1;
};

/// For each purported n and run r, draws a random ordered subset of n
/// records from a stream derived from (seed, n, r), replays it and
/// aggregates. Deterministic for a fixed seed and input order.
ReplayReport replay_study(const std::vector<HistoricalRecord>& records, const StudyOptions& options);

}  // namespace seqmatch::replay
