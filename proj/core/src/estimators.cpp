#include "seqmatch/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seqmatch/error.hpp"
#include "seqmatch/numstat/linalg.hpp"

namespace seqmatch {

std::string_view to_string(EstimateMethod method) {
  switch (method) {
    case EstimateMethod::classic_combined:
      return "classic_combined";
    case EstimateMethod::pairs_only:
      return "pairs_only";
    case EstimateMethod::reservoir_only:
      return "reservoir_only";
    case EstimateMethod::ols_combined:
      return "ols_combined";
    case EstimateMethod::ols_pairs_only:
      return "ols_pairs_only";
    case EstimateMethod::ols_reservoir_only:
      return "ols_reservoir_only";
  }
  return "unknown";
}

bool is_ols(EstimateMethod method) {
  return method == EstimateMethod::ols_combined || method == EstimateMethod::ols_pairs_only ||
         method == EstimateMethod::ols_reservoir_only;
}

double pair_variance(const Eigen::Ref<const Eigen::VectorXd>& differences) {
  const Eigen::Index m = differences.size();
  if (m < 2) throw InsufficientData("pair variance needs at least two matched pairs");
  const double mean = differences.mean();
  const double ss = (differences.array() - mean).square().sum();
  return ss / static_cast<double>(m * (m - 1));
}

double reservoir_variance(const ReservoirSample& r) {
  const Eigen::Index nt = r.n_t();
  const Eigen::Index nc = r.n_c();
  if (nt < 1 || nc < 1 || nt + nc < 3) {
    throw InsufficientData("reservoir variance needs both arms and at least three subjects");
  }
  const double ss = (r.responses_t.array() - r.responses_t.mean()).square().sum() +
                    (r.responses_c.array() - r.responses_c.mean()).square().sum();
  return ss / static_cast<double>(nt + nc - 2) * (1.0 / static_cast<double>(nt) + 1.0 / static_cast<double>(nc));
}

Combination combine_components(double est_pairs, double var_pairs, double est_reservoir, double var_reservoir) {
  const double total = var_pairs + var_reservoir;
  if (!(total > 0.0)) return {0.5 * (est_pairs + est_reservoir), 0.0, 0.5};
  const double w = var_reservoir / total;
  return {w * est_pairs + (1.0 - w) * est_reservoir, std::sqrt(var_pairs * var_reservoir / total), w};
}

namespace {

void fill_combined(EffectEstimate& out, double est_p, double var_p, double est_r, double var_r) {
  const Combination c = combine_components(est_p, var_p, est_r, var_r);
  out.estimate = c.estimate;
  out.std_error = c.std_error;
  out.weight_pairs = c.weight_pairs;
  out.component_pairs = est_p;
  out.component_reservoir = est_r;
  out.variance_pairs = var_p;
  out.variance_reservoir = var_r;
}

void check_alignment(const PairedSample& pairs, const ReservoirSample& reservoir) {
  if (pairs.diff_covariates.rows() != pairs.size() && pairs.diff_covariates.size() != 0) {
    throw DimensionMismatch("pair covariate rows do not align with differences");
  }
  if ((reservoir.covariates_t.size() != 0 && reservoir.covariates_t.rows() != reservoir.n_t()) ||
      (reservoir.covariates_c.size() != 0 && reservoir.covariates_c.rows() != reservoir.n_c())) {
    throw DimensionMismatch("reservoir covariate rows do not align with responses");
  }
}

}  // namespace

EffectEstimate classic_combined(const PairedSample& pairs, const ReservoirSample& reservoir) {
  check_alignment(pairs, reservoir);
  EffectEstimate out;
  out.pairs = pairs.size();
  out.reservoir_t = reservoir.n_t();
  out.reservoir_c = reservoir.n_c();

  const bool pairs_usable = pairs.size() >= 2;
  const bool reservoir_usable = reservoir.n_t() >= 2 && reservoir.n_c() >= 2;

  if (pairs_usable && reservoir_usable) {
    const double d_bar = pairs.differences.mean();
    const double delta_r = reservoir.responses_t.mean() - reservoir.responses_c.mean();
    fill_combined(out, d_bar, pair_variance(pairs.differences), delta_r, reservoir_variance(reservoir));
    out.method = EstimateMethod::classic_combined;
    out.df = pairs.size() - 1;
  } else if (pairs_usable) {
    out.method = EstimateMethod::pairs_only;
    out.estimate = pairs.differences.mean();
    out.variance_pairs = pair_variance(pairs.differences);
    out.std_error = std::sqrt(*out.variance_pairs);
    out.component_pairs = out.estimate;
    out.weight_pairs = 1.0;
    out.df = pairs.size() - 1;
  } else if (reservoir_usable) {
    out.method = EstimateMethod::reservoir_only;
    out.estimate = reservoir.responses_t.mean() - reservoir.responses_c.mean();
    out.variance_reservoir = reservoir_variance(reservoir);
    out.std_error = std::sqrt(*out.variance_reservoir);
    out.component_reservoir = out.estimate;
    out.weight_pairs = 0.0;
    out.df = reservoir.size() - 2;
  } else {
    throw InsufficientData("need at least two matched pairs or two subjects per arm in the reservoir");
  }
  return out;
}

namespace {

struct OlsComponent {
  double estimate;
  double variance;
  Eigen::Index df;
};

Eigen::Index covariate_dim(const PairedSample& pairs, const ReservoirSample& reservoir) {
  if (pairs.diff_covariates.cols() > 0) return pairs.diff_covariates.cols();
  return std::max(reservoir.covariates_t.cols(), reservoir.covariates_c.cols());
}

std::optional<OlsComponent> fit_pairs(const PairedSample& pairs, Eigen::Index p, Eigen::Index min_df) {
  const Eigen::Index m = pairs.size();
  if (m < p + 1 + min_df) return std::nullopt;
  Eigen::MatrixXd design(m, p + 1);
  design.col(0).setOnes();
  if (p > 0) design.rightCols(p) = pairs.diff_covariates;
  const numstat::OlsFit fit = numstat::ols(design, pairs.differences);
  if (fit.df_residual < 1 || !std::isfinite(fit.coefficient_variances[0])) return std::nullopt;
  return OlsComponent{fit.coefficients[0], fit.coefficient_variances[0], fit.df_residual};
}

std::optional<OlsComponent> fit_reservoir(const ReservoirSample& r, Eigen::Index p, Eigen::Index min_df) {
  const Eigen::Index nt = r.n_t();
  const Eigen::Index nc = r.n_c();
  if (nt < 2 || nc < 2 || nt + nc < p + 2 + min_df) return std::nullopt;
  Eigen::MatrixXd design(nt + nc, p + 2);
  design.col(0).head(nt).setOnes();
  design.col(0).tail(nc).setZero();
  design.col(1).setOnes();
  if (p > 0) {
    design.block(0, 2, nt, p) = r.covariates_t;
    design.block(nt, 2, nc, p) = r.covariates_c;
  }
  Eigen::VectorXd y(nt + nc);
  y << r.responses_t, r.responses_c;
  const numstat::OlsFit fit = numstat::ols(design, y);
  if (fit.df_residual < 1 || !std::isfinite(fit.coefficient_variances[0])) return std::nullopt;
  return OlsComponent{fit.coefficients[0], fit.coefficient_variances[0], fit.df_residual};
}

}  // namespace

EffectEstimate ols_combined(const PairedSample& pairs, const ReservoirSample& reservoir, OlsOptions options) {
  check_alignment(pairs, reservoir);
  const Eigen::Index p = covariate_dim(pairs, reservoir);
  if ((pairs.size() > 0 && pairs.diff_covariates.cols() != p) ||
      (reservoir.n_t() > 0 && reservoir.covariates_t.cols() != p) ||
      (reservoir.n_c() > 0 && reservoir.covariates_c.cols() != p)) {
    throw DimensionMismatch("pairs and reservoir disagree on the number of covariates");
  }

  EffectEstimate out;
  out.pairs = pairs.size();
  out.reservoir_t = reservoir.n_t();
  out.reservoir_c = reservoir.n_c();

  const auto pc = fit_pairs(pairs, p, options.min_df);
  const auto rc = fit_reservoir(reservoir, p, options.min_df);
  if (pc && rc) {
    fill_combined(out, pc->estimate, pc->variance, rc->estimate, rc->variance);
    out.method = EstimateMethod::ols_combined;
    out.df = pc->df;
  } else if (pc) {
    out.method = EstimateMethod::ols_pairs_only;
    out.estimate = pc->estimate;
    out.std_error = std::sqrt(pc->variance);
    out.component_pairs = pc->estimate;
    out.variance_pairs = pc->variance;
    out.weight_pairs = 1.0;
    out.df = pc->df;
  } else if (rc) {
    out.method = EstimateMethod::ols_reservoir_only;
    out.estimate = rc->estimate;
    out.std_error = std::sqrt(rc->variance);
    out.component_reservoir = rc->estimate;
    out.variance_reservoir = rc->variance;
    out.weight_pairs = 0.0;
    out.df = rc->df;
  } else {
    throw InsufficientData("neither the pair regression nor the reservoir regression has residual degrees of freedom");
  }
  return out;
}

AnalysisSamples make_samples(const TrialSplit& split, const std::function<double(std::int64_t)>& response) {
  AnalysisSamples out;
  const auto m = static_cast<Eigen::Index>(split.pairs.size());
  Eigen::Index p = 0;
  if (!split.pairs.empty()) {
    p = split.pairs.front().first.covariates.size();
  } else if (!split.reservoir.empty()) {
    p = split.reservoir.front().covariates.size();
  }

  out.pairs.differences.resize(m);
  out.pairs.diff_covariates.resize(m, p);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& [t, c] = split.pairs[static_cast<std::size_t>(k)];
    out.pairs.differences[k] = response(t.id) - response(c.id);
    out.pairs.diff_covariates.row(k) = (t.covariates - c.covariates).transpose();
  }

  Eigen::Index nt = 0;
  for (const Subject& s : split.reservoir) nt += s.arm == Arm::treatment ? 1 : 0;
  const Eigen::Index nc = static_cast<Eigen::Index>(split.reservoir.size()) - nt;
  ReservoirSample& r = out.reservoir;
  r.responses_t.resize(nt);
  r.responses_c.resize(nc);
  r.covariates_t.resize(nt, p);
  r.covariates_c.resize(nc, p);
  Eigen::Index it = 0;
  Eigen::Index ic = 0;
  for (const Subject& s : split.reservoir) {
    if (s.arm == Arm::treatment) {
      r.responses_t[it] = response(s.id);
      r.covariates_t.row(it++) = s.covariates.transpose();
    } else {
      r.responses_c[ic] = response(s.id);
      r.covariates_c.row(ic++) = s.covariates.transpose();
    }
  }
  return out;
}

}  // namespace seqmatch
