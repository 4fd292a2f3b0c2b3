#include "seqmatch/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "seqmatch/error.hpp"
#include "seqmatch/numstat/distributions.hpp"
#include "seqmatch/rng.hpp"

namespace seqmatch {

std::string_view to_string(TestMethod method) {
  switch (method) {
    case TestMethod::classic_z:
      return "classic_z";
    case TestMethod::ols_z:
      return "ols_z";
    case TestMethod::exact_mc:
      return "exact_mc";
    case TestMethod::exact_full:
      return "exact_full";
  }
  return "unknown";
}

TestResult z_test(const EffectEstimate& estimate, double beta0, ZTestOptions options) {
  if (!(estimate.std_error > 0.0)) throw DomainError("z test needs a positive standard error");
  TestResult result;
  result.method = is_ols(estimate.method) ? TestMethod::ols_z : TestMethod::classic_z;
  result.statistic = (estimate.estimate - beta0) / estimate.std_error;
  const double magnitude = std::fabs(result.statistic);
  if (options.conservative_t && estimate.df && *estimate.df >= 1) {
    result.p_value = 2.0 * numstat::t_cdf(-magnitude, static_cast<double>(*estimate.df));
  } else {
    result.p_value = std::erfc(magnitude / std::sqrt(2.0));
  }
  result.p_value = std::clamp(result.p_value, 0.0, 1.0);
  return result;
}

std::optional<std::int64_t> configuration_count(std::int64_t m, std::int64_t n_r, std::int64_t n_rt) {
  if (m < 0 || n_r < 0 || n_rt < 0 || n_rt > n_r) return std::nullopt;
  if (m >= 62) return std::nullopt;
  const std::int64_t limit = std::numeric_limits<std::int64_t>::max();
  std::int64_t binom = 1;
  const std::int64_t k = std::min(n_rt, n_r - n_rt);
  for (std::int64_t i = 1; i <= k; ++i) {
    // binom * (n_r - k + i) / i stays integral at every step.
    const std::int64_t factor = n_r - k + i;
    if (binom > limit / factor) return std::nullopt;
    binom = binom * factor / i;
  }
  const std::int64_t signs = std::int64_t{1} << m;
  if (binom > limit / signs) return std::nullopt;
  return binom * signs;
}

namespace {

// Statistic ladder shared by every configuration. Component counts never
// change under relabeling, so the branch taken is the same for all of them.
enum class Ladder { combined, pairs, reservoir };

Ladder choose_ladder(Eigen::Index m, Eigen::Index nt, Eigen::Index nc) {
  const bool pairs_var = m >= 2;
  const bool reservoir_var = nt >= 2 && nc >= 2;
  if (pairs_var && reservoir_var) return Ladder::combined;
  if (pairs_var) return Ladder::pairs;
  if (reservoir_var) return Ladder::reservoir;
  if (m >= 1) return Ladder::pairs;
  if (nt >= 1 && nc >= 1) return Ladder::reservoir;
  throw InsufficientData("exact test needs at least one pair or one subject per reservoir arm");
}

class ClassicEvaluator {
 public:
  ClassicEvaluator(const PairedSample& pairs, const ReservoirSample& reservoir, double beta0)
      : m_(pairs.size()), nt_(reservoir.n_t()), nc_(reservoir.n_c()), ladder_(choose_ladder(m_, nt_, nc_)) {
    d_ = pairs.differences.array() - beta0;
    sum_d2_ = d_.squaredNorm();
    pooled_.resize(nt_ + nc_);
    pooled_ << (reservoir.responses_t.array() - beta0).matrix(), reservoir.responses_c;
    total_ = pooled_.sum();
    total_sq_ = pooled_.squaredNorm();
  }

  Eigen::Index m() const { return m_; }
  Eigen::Index n_t() const { return nt_; }
  Eigen::Index n_r() const { return nt_ + nc_; }
  const Eigen::VectorXd& differences() const { return d_; }
  const Eigen::VectorXd& pooled() const { return pooled_; }

  struct PairPart {
    double mean = 0.0;
    double var = 0.0;
  };
  struct ReservoirPart {
    double diff = 0.0;
    double var = 0.0;
  };

  PairPart pair_part(double signed_sum) const {
    PairPart out;
    if (m_ == 0) return out;
    const double md = static_cast<double>(m_);
    out.mean = signed_sum / md;
    if (m_ >= 2) out.var = std::max(0.0, (sum_d2_ - md * out.mean * out.mean) / (md * (md - 1.0)));
    return out;
  }

  ReservoirPart reservoir_part(double sum_t, double sumsq_t) const {
    ReservoirPart out;
    if (nt_ == 0 || nc_ == 0) return out;
    const double nt = static_cast<double>(nt_);
    const double nc = static_cast<double>(nc_);
    const double sum_c = total_ - sum_t;
    const double sumsq_c = total_sq_ - sumsq_t;
    out.diff = sum_t / nt - sum_c / nc;
    if (nt_ + nc_ >= 3) {
      const double ss = std::max(0.0, sumsq_t - sum_t * sum_t / nt) + std::max(0.0, sumsq_c - sum_c * sum_c / nc);
      out.var = ss / (nt + nc - 2.0) * (1.0 / nt + 1.0 / nc);
    }
    return out;
  }

  double statistic(const PairPart& pp, const ReservoirPart& rp) const {
    switch (ladder_) {
      case Ladder::combined:
        return combine_components(pp.mean, pp.var, rp.diff, rp.var).estimate;
      case Ladder::pairs:
        return pp.mean;
      case Ladder::reservoir:
        return rp.diff;
    }
    return 0.0;
  }

  double observed() const {
    double sum_t = 0.0;
    double sumsq_t = 0.0;
    for (Eigen::Index i = 0; i < nt_; ++i) {
      sum_t += pooled_[i];
      sumsq_t += pooled_[i] * pooled_[i];
    }
    return statistic(pair_part(d_.sum()), reservoir_part(sum_t, sumsq_t));
  }

 private:
  Eigen::Index m_;
  Eigen::Index nt_;
  Eigen::Index nc_;
  Ladder ladder_;
  Eigen::VectorXd d_;
  double sum_d2_ = 0.0;
  Eigen::VectorXd pooled_;
  double total_ = 0.0;
  double total_sq_ = 0.0;
};

// Regression statistic for one configuration, given pair signs and the
// reservoir membership mask (true = treatment).
class OlsEvaluator {
 public:
  OlsEvaluator(const PairedSample& pairs, const ReservoirSample& reservoir, double beta0, OlsOptions options,
               const ClassicEvaluator& fallback)
      : options_(options), fallback_(fallback) {
    d_ = pairs.differences.array() - beta0;
    dx_ = pairs.diff_covariates;
    const Eigen::Index p = std::max({dx_.cols(), reservoir.covariates_t.cols(), reservoir.covariates_c.cols()});
    if (dx_.cols() != p) dx_ = Eigen::MatrixXd::Zero(d_.size(), p);
    pooled_.resize(reservoir.size());
    pooled_ << (reservoir.responses_t.array() - beta0).matrix(), reservoir.responses_c;
    pooled_x_.resize(reservoir.size(), p);
    if (reservoir.n_t() > 0) pooled_x_.topRows(reservoir.n_t()) = reservoir.covariates_t;
    if (reservoir.n_c() > 0) pooled_x_.bottomRows(reservoir.n_c()) = reservoir.covariates_c;
    nt_ = reservoir.n_t();
  }

  double statistic(const std::vector<char>& flip, const std::vector<char>& is_t) const {
    PairedSample ps;
    ps.differences = d_;
    ps.diff_covariates = dx_;
    double signed_sum = 0.0;
    for (Eigen::Index k = 0; k < d_.size(); ++k) {
      if (flip[static_cast<std::size_t>(k)]) {
        ps.differences[k] = -ps.differences[k];
        ps.diff_covariates.row(k) *= -1.0;
      }
      signed_sum += ps.differences[k];
    }
    ReservoirSample rs;
    const Eigen::Index n = pooled_.size();
    const Eigen::Index nc = n - nt_;
    rs.responses_t.resize(nt_);
    rs.responses_c.resize(nc);
    rs.covariates_t.resize(nt_, pooled_x_.cols());
    rs.covariates_c.resize(nc, pooled_x_.cols());
    Eigen::Index it = 0;
    Eigen::Index ic = 0;
    double sum_t = 0.0;
    double sumsq_t = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (is_t[static_cast<std::size_t>(i)]) {
        rs.responses_t[it] = pooled_[i];
        rs.covariates_t.row(it++) = pooled_x_.row(i);
        sum_t += pooled_[i];
        sumsq_t += pooled_[i] * pooled_[i];
      } else {
        rs.responses_c[ic] = pooled_[i];
        rs.covariates_c.row(ic++) = pooled_x_.row(i);
      }
    }
    try {
      return ols_combined(ps, rs, options_).estimate;
    } catch (const InsufficientData&) {
      return fallback_.statistic(fallback_.pair_part(signed_sum), fallback_.reservoir_part(sum_t, sumsq_t));
    }
  }

 private:
  OlsOptions options_;
  const ClassicEvaluator& fallback_;
  Eigen::VectorXd d_;
  Eigen::MatrixXd dx_;
  Eigen::VectorXd pooled_;
  Eigen::MatrixXd pooled_x_;
  Eigen::Index nt_ = 0;
};

struct Exceedance {
  double threshold;
  bool operator()(double stat) const { return std::fabs(stat) >= threshold; }
};

Exceedance make_exceedance(double observed, const ClassicEvaluator& ev) {
  double scale = std::fabs(observed);
  if (ev.differences().size() > 0) scale = std::max(scale, ev.differences().cwiseAbs().maxCoeff());
  if (ev.pooled().size() > 0) scale = std::max(scale, ev.pooled().cwiseAbs().maxCoeff());
  return {std::fabs(observed) - 1e-11 * scale};
}

// One Monte-Carlo configuration drawn from its own stream.
struct DrawScratch {
  std::vector<Eigen::Index> perm;
  std::vector<char> flip;
  std::vector<char> is_t;
};

double draw_statistic(std::int64_t draw, std::uint64_t seed, const ClassicEvaluator& ev, const OlsEvaluator* ols,
                      DrawScratch& scratch) {
  CounterRng rng = CounterRng(seed).split(static_cast<std::uint64_t>(draw));
  const Eigen::Index m = ev.m();
  const Eigen::Index n = ev.n_r();
  const Eigen::Index nt = ev.n_t();

  scratch.flip.assign(static_cast<std::size_t>(m), 0);
  double signed_sum = 0.0;
  std::uint64_t bits = 0;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (k % 64 == 0) bits = rng();
    const bool flipped = (bits >> (k % 64)) & 1U;
    scratch.flip[static_cast<std::size_t>(k)] = flipped ? 1 : 0;
    signed_sum += flipped ? -ev.differences()[k] : ev.differences()[k];
  }

  scratch.perm.resize(static_cast<std::size_t>(n));
  std::iota(scratch.perm.begin(), scratch.perm.end(), Eigen::Index{0});
  double sum_t = 0.0;
  double sumsq_t = 0.0;
  for (Eigen::Index i = 0; i < nt; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(n - i));
    std::swap(scratch.perm[static_cast<std::size_t>(i)], scratch.perm[j]);
    const double v = ev.pooled()[scratch.perm[static_cast<std::size_t>(i)]];
    sum_t += v;
    sumsq_t += v * v;
  }
  if (ols != nullptr) {
    scratch.is_t.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < nt; ++i) scratch.is_t[static_cast<std::size_t>(scratch.perm[static_cast<std::size_t>(i)])] = 1;
    return ols->statistic(scratch.flip, scratch.is_t);
  }
  return ev.statistic(ev.pair_part(signed_sum), ev.reservoir_part(sum_t, sumsq_t));
}

std::int64_t count_mc_exceedances(const ExactTestOptions& options, const ClassicEvaluator& ev, const OlsEvaluator* ols,
                                  Exceedance exceeds) {
  const std::int64_t draws = options.draws;
  const unsigned workers = std::max(1U, std::min<unsigned>(options.workers, static_cast<unsigned>(std::max<std::int64_t>(draws, 1))));
  auto run_range = [&](std::int64_t begin, std::int64_t end) {
    DrawScratch scratch;
    std::int64_t count = 0;
    for (std::int64_t d = begin; d < end; ++d) count += exceeds(draw_statistic(d, options.seed, ev, ols, scratch)) ? 1 : 0;
    return count;
  };
  if (workers == 1) return run_range(0, draws);

  std::vector<std::int64_t> counts(workers, 0);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::int64_t chunk = (draws + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::int64_t begin = std::min<std::int64_t>(draws, w * chunk);
    const std::int64_t end = std::min<std::int64_t>(draws, begin + chunk);
    threads.emplace_back([&, w, begin, end] { counts[w] = run_range(begin, end); });
  }
  for (auto& t : threads) t.join();
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t count_full_exceedances(const ClassicEvaluator& ev, const OlsEvaluator* ols, Exceedance exceeds) {
  const Eigen::Index m = ev.m();
  const Eigen::Index n = ev.n_r();
  const Eigen::Index nt = ev.n_t();
  const std::uint64_t sign_masks = std::uint64_t{1} << m;

  // Pair part depends only on the sign mask.
  std::vector<ClassicEvaluator::PairPart> pair_parts;
  if (ols == nullptr) {
    pair_parts.reserve(sign_masks);
    for (std::uint64_t mask = 0; mask < sign_masks; ++mask) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) s += ((mask >> k) & 1U) ? -ev.differences()[k] : ev.differences()[k];
      pair_parts.push_back(ev.pair_part(s));
    }
  }

  std::vector<char> is_t(static_cast<std::size_t>(n), 0);
  std::fill(is_t.begin(), is_t.begin() + nt, 1);
  std::vector<char> flip(static_cast<std::size_t>(m), 0);
  std::int64_t count = 0;
  do {
    if (ols == nullptr) {
      double sum_t = 0.0;
      double sumsq_t = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (is_t[static_cast<std::size_t>(i)]) {
          sum_t += ev.pooled()[i];
          sumsq_t += ev.pooled()[i] * ev.pooled()[i];
        }
      }
      const auto rp = ev.reservoir_part(sum_t, sumsq_t);
      for (const auto& pp : pair_parts) count += exceeds(ev.statistic(pp, rp)) ? 1 : 0;
    } else {
      for (std::uint64_t mask = 0; mask < sign_masks; ++mask) {
        for (Eigen::Index k = 0; k < m; ++k) flip[static_cast<std::size_t>(k)] = ((mask >> k) & 1U) ? 1 : 0;
        count += exceeds(ols->statistic(flip, is_t)) ? 1 : 0;
      }
    }
  } while (std::prev_permutation(is_t.begin(), is_t.end()));
  return count;
}

}  // namespace

TestResult exact_test(const PairedSample& pairs, const ReservoirSample& reservoir, double beta0,
                      const ExactTestOptions& options) {
  const ClassicEvaluator classic(pairs, reservoir, beta0);
  std::optional<OlsEvaluator> ols;
  if (options.statistic == ExactStatistic::ols) ols.emplace(pairs, reservoir, beta0, options.ols, classic);
  const OlsEvaluator* ols_ptr = ols ? &*ols : nullptr;

  double observed;
  if (ols_ptr != nullptr) {
    std::vector<char> flip(static_cast<std::size_t>(classic.m()), 0);
    std::vector<char> is_t(static_cast<std::size_t>(classic.n_r()), 0);
    std::fill(is_t.begin(), is_t.begin() + classic.n_t(), 1);
    observed = ols_ptr->statistic(flip, is_t);
  } else {
    observed = classic.observed();
  }
  const Exceedance exceeds = make_exceedance(observed, classic);

  TestResult result;
  result.statistic = observed;
  if (options.mode == ExactMode::full) {
    const auto total = configuration_count(classic.m(), classic.n_r(), classic.n_t());
    if (!total || *total > options.enumeration_cap) {
      throw std::invalid_argument("full enumeration exceeds the configuration cap of " +
                                  std::to_string(options.enumeration_cap));
    }
    result.method = TestMethod::exact_full;
    result.configurations = *total;
    result.p_value = static_cast<double>(count_full_exceedances(classic, ols_ptr, exceeds)) / static_cast<double>(*total);
  } else {
    if (options.draws < 1) throw std::invalid_argument("Monte-Carlo exact test needs at least one draw");
    result.method = TestMethod::exact_mc;
    result.mc_draws = options.draws;
    const std::int64_t exceed = count_mc_exceedances(options, classic, ols_ptr, exceeds);
    result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + options.draws);
  }
  result.p_value = std::clamp(result.p_value, 0.0, 1.0);
  return result;
}

}  // namespace seqmatch
