#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "seqmatch/engine.hpp"

namespace seqmatch {

/// Within-pair response differences (treatment minus control) and the
/// matching covariate differences, one row per pair.
struct PairedSample {
  Eigen::VectorXd differences;
  Eigen::MatrixXd diff_covariates;  // m x p, p may be 0

  Eigen::Index size() const { return differences.size(); }
};

struct ReservoirSample {
  Eigen::VectorXd responses_t;
  Eigen::VectorXd responses_c;
  Eigen::MatrixXd covariates_t;  // n_RT x p
  Eigen::MatrixXd covariates_c;  // n_RC x p

  Eigen::Index n_t() const { return responses_t.size(); }
  Eigen::Index n_c() const { return responses_c.size(); }
  Eigen::Index size() const { return n_t() + n_c(); }
};

enum class EstimateMethod {
  classic_combined,
  pairs_only,
  reservoir_only,
  ols_combined,
  ols_pairs_only,
  ols_reservoir_only,
};

std::string_view to_string(EstimateMethod method);
bool is_ols(EstimateMethod method);

struct EffectEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double weight_pairs = 0.0;
  std::optional<double> component_pairs;
  std::optional<double> component_reservoir;
  std::optional<double> variance_pairs;      // squared SE of the pairs component
  std::optional<double> variance_reservoir;  // squared SE of the reservoir component
  EstimateMethod method = EstimateMethod::classic_combined;
  Eigen::Index pairs = 0;
  Eigen::Index reservoir_t = 0;
  Eigen::Index reservoir_c = 0;
  /// Residual degrees of freedom of the component driving the conservative
  /// t reference (m - 1 for classic pairs, n_R - 2 for the two-sample path).
  std::optional<Eigen::Index> df;
};

/// S^2_{D-bar}: sample variance of the differences divided by m. Requires m >= 2.
double pair_variance(const Eigen::Ref<const Eigen::VectorXd>& differences);

/// Pooled two-sample variance of the reservoir mean difference,
/// SS_within / (n_R - 2) * (1/n_RT + 1/n_RC). Requires both arms non-empty
/// and n_R >= 3.
double reservoir_variance(const ReservoirSample& reservoir);

/// Inverse-variance blend of the matched-pair mean difference and the
/// reservoir mean difference. Falls back to the reservoir two-sample
/// estimator when m < 2 and to the pairs estimator when the reservoir has
/// fewer than two subjects in either arm. Throws InsufficientData when
/// neither component is estimable.
EffectEstimate classic_combined(const PairedSample& pairs, const ReservoirSample& reservoir);

/// Minimum residual df each regression must keep before it is used.
/// Pairs need m >= p + 1 + min_df, the reservoir n_R >= p + 2 + min_df
/// (with at least two subjects per arm, as in the classic fallback).
struct OlsOptions {
  Eigen::Index min_df = 1;
};

/// Regression-adjusted analogue of classic_combined: intercept of
/// D ~ 1 + dx on the pairs, treatment coefficient of y ~ 1_T + 1 + x on the
/// reservoir, blended with inverse-variance weights.
EffectEstimate ols_combined(const PairedSample& pairs, const ReservoirSample& reservoir, OlsOptions options = {});

struct AnalysisSamples {
  PairedSample pairs;
  ReservoirSample reservoir;
};

/// Assemble analysis samples from a trial split; `response` maps a subject
/// id to its observed response.
AnalysisSamples make_samples(const TrialSplit& split, const std::function<double(std::int64_t)>& response);

/// Inverse-variance combination used by both estimators:
/// w = var_r / (var_p + var_r). Equal weights when both variances are zero.
struct Combination {
  double estimate;
  double std_error;
  double weight_pairs;
};
Combination combine_components(double est_pairs, double var_pairs, double est_reservoir, double var_reservoir);

}  // namespace seqmatch
