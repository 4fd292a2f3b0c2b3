#include "seqmatch/simlab.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "seqmatch/competitors.hpp"
#include "seqmatch/error.hpp"
#include "seqmatch/estimators.hpp"
#include "seqmatch/inference.hpp"
#include "seqmatch/numstat/distributions.hpp"
#include "seqmatch/numstat/linalg.hpp"

namespace seqmatch::simlab {
namespace {

std::string upper(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

constexpr std::array<Scenario, 3> kScenarios{Scenario::nl, Scenario::li, Scenario::ze};
constexpr std::array<TestKind, 3> kTests{TestKind::classic, TestKind::linear, TestKind::exact};

double two_sided_normal(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

ReservoirSample two_sample(const SimulatedTrial& trial, const std::vector<Arm>& arms) {
  const Eigen::Index n = trial.size();
  Eigen::Index n_t = 0;
  for (Arm a : arms) n_t += a == Arm::treatment;
  ReservoirSample r;
  r.responses_t.resize(n_t);
  r.responses_c.resize(n - n_t);
  r.covariates_t.resize(n_t, trial.covariates.cols());
  r.covariates_c.resize(n - n_t, trial.covariates.cols());
  Eigen::Index it = 0, ic = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Arm arm = arms[static_cast<std::size_t>(i)];
    if (arm == Arm::treatment) {
      r.responses_t[it] = trial.response(i, arm);
      r.covariates_t.row(it++) = trial.covariates.row(i);
    } else {
      r.responses_c[ic] = trial.response(i, arm);
      r.covariates_c.row(ic++) = trial.covariates.row(i);
    }
  }
  return r;
}

TestOutcome from_estimate(const EffectEstimate& est) {
  const TestResult z = z_test(est, 0.0);
  return {est.estimate, est.std_error, z.p_value};
}

TestOutcome competitor_linear(const SimulatedTrial& trial, const AllocationResult& allocation) {
  const Eigen::Index n = trial.size();
  const Eigen::Index p = trial.covariates.cols();
  const bool blocked = !allocation.blocks.empty();
  const Eigen::Index extra = blocked ? competitors::kBlocks - 1 : 0;
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, 2 + p + extra);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Arm arm = allocation.arms[static_cast<std::size_t>(i)];
    design(i, 0) = arm == Arm::treatment ? 1.0 : 0.0;
    design(i, 1) = 1.0;
    design.block(i, 2, 1, p) = trial.covariates.row(i);
    if (blocked) {
      const int b = allocation.blocks[static_cast<std::size_t>(i)];
      if (b > 0) design(i, 2 + p + b - 1) = 1.0;
    }
    y[i] = trial.response(i, arm);
  }
  const numstat::OlsFit fit = numstat::ols(design, y);
  const double var = fit.coefficient_variances[0];
  if (fit.df_residual < 1 || !std::isfinite(var)) throw InsufficientData("regression has no residual df");
  if (var <= 0.0) throw DomainError("zero standard error");
  const double se = std::sqrt(var);
  const double est = fit.coefficients[0];
  return {est, se, two_sided_normal(est / se)};
}

struct RepOutcome {
  bool ok = false;
  double estimate = 0.0;
  bool rejected = false;
};

struct RepResult {
  // [allocator][test]
  std::array<std::array<RepOutcome, 3>, 5> outcomes{};
  std::array<double, 5> balance{};
};

std::size_t index(AllocatorKind a) { return static_cast<std::size_t>(a); }
std::size_t index(TestKind t) { return static_cast<std::size_t>(t); }

RepResult run_replication(const ScenarioSpec& spec, const GridSpec& grid, std::int64_t rep) {
  const CounterRng base(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.scenario),
                                    static_cast<std::uint64_t>(spec.n), static_cast<std::uint64_t>(rep)));
  CounterRng data = base;
  const SimulatedTrial trial = generate_trial(spec, data);
  RepResult result;
  for (AllocatorKind kind : grid.allocators) {
    const std::size_t ai = index(kind);
    CounterRng alloc_rng = base.split(1 + ai);
    const AllocationResult allocation = allocate_trial(kind, trial.covariates, spec.lambda, alloc_rng);
    result.balance[ai] = balance(trial.covariates, allocation.arms);
    const std::uint64_t exact_seed = base.split(100 + ai).key();
    for (TestKind test : grid.tests) {
      RepOutcome& out = result.outcomes[ai][index(test)];
      try {
        const TestOutcome t = analyze(kind, test, trial, allocation, spec.mc_draws, exact_seed);
        out.ok = std::isfinite(t.estimate) && std::isfinite(t.p_value);
        out.estimate = t.estimate;
        out.rejected = t.p_value <= spec.alpha;
      } catch (const InsufficientData&) {
        out.ok = false;
      } catch (const DomainError&) {
        out.ok = false;
      }
    }
  }
  return result;
}

std::vector<RepResult> run_spec(const ScenarioSpec& spec, const GridSpec& grid) {
  std::vector<RepResult> reps(static_cast<std::size_t>(spec.replications));
  const unsigned workers = std::max(1u, grid.workers);
  if (workers == 1) {
    for (std::int64_t r = 0; r < spec.replications; ++r) reps[static_cast<std::size_t>(r)] = run_replication(spec, grid, r);
    return reps;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::int64_t r = next++; r < spec.replications; r = next++) {
        try {
          reps[static_cast<std::size_t>(r)] = run_replication(spec, grid, r);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return reps;
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  std::int64_t count = 0;
};

Moments moments(const std::vector<double>& values) {
  Moments m;
  m.count = static_cast<std::int64_t>(values.size());
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.variance = ss / static_cast<double>(values.size() - 1);
  }
  return m;
}

}  // namespace

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::nl: return "NL";
    case Scenario::li: return "LI";
    case Scenario::ze: return "ZE";
  }
  return "?";
}

std::string_view to_string(AllocatorKind a) {
  switch (a) {
    case AllocatorKind::complete_randomization: return "CR";
    case AllocatorKind::efron: return "EFRON";
    case AllocatorKind::stratification: return "STRAT";
    case AllocatorKind::minimization: return "MIN";
    case AllocatorKind::sequential_matching: return "SM";
  }
  return "?";
}

std::string_view to_string(TestKind t) {
  switch (t) {
    case TestKind::classic: return "classic";
    case TestKind::linear: return "ols";
    case TestKind::exact: return "exact";
  }
  return "?";
}

std::optional<Scenario> parse_scenario(std::string_view text) {
  const std::string u = upper(text);
  for (Scenario s : kScenarios)
    if (u == to_string(s)) return s;
  return std::nullopt;
}

std::optional<AllocatorKind> parse_allocator(std::string_view text) {
  const std::string u = upper(text);
  for (AllocatorKind a : kAllAllocators)
    if (u == to_string(a)) return a;
  return std::nullopt;
}

std::optional<TestKind> parse_test(std::string_view text) {
  const std::string u = upper(text);
  for (TestKind t : kTests)
    if (u == upper(to_string(t))) return t;
  return std::nullopt;
}

void ScenarioSpec::validate() const {
  if (n < 4) throw std::invalid_argument("n must be at least 4");
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
  if (!(sigma2_e > 0.0)) throw std::invalid_argument("sigma2_e must be positive");
  if (replications < 1) throw std::invalid_argument("replications must be positive");
  if (mc_draws < 1) throw std::invalid_argument("mc_draws must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (!std::isfinite(beta_t)) throw std::invalid_argument("beta_t must be finite");
}

double covariate_effect(Scenario scenario, double x1, double x2) {
  switch (scenario) {
    case Scenario::nl: return x1 + x2 + x1 * x1 + x2 * x2 + x1 * x2;
    case Scenario::li: return 2.0 * x1 + 2.0 * x2;
    case Scenario::ze: return 0.0;
  }
  return 0.0;
}

double SimulatedTrial::response(Eigen::Index i, Arm arm) const {
  const double effect = arm == Arm::treatment ? beta_t : 0.0;
  return effect + covariate_effect(scenario, covariates(i, 0), covariates(i, 1)) + noise[i];
}

SimulatedTrial generate_trial(const ScenarioSpec& spec, CounterRng& rng) {
  spec.validate();
  SimulatedTrial trial;
  trial.scenario = spec.scenario;
  trial.beta_t = spec.beta_t;
  trial.covariates.resize(spec.n, 2);
  trial.noise.resize(spec.n);
  const double sd = std::sqrt(spec.sigma2_e);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    trial.covariates(i, 0) = rng.normal();
    trial.covariates(i, 1) = rng.normal();
    trial.noise[i] = sd * rng.normal();
  }
  return trial;
}

AllocationResult allocate_trial(AllocatorKind kind, const Eigen::MatrixXd& covariates, double lambda,
                                CounterRng& rng) {
  const Eigen::Index n = covariates.rows();
  AllocationResult out;
  out.arms.reserve(static_cast<std::size_t>(n));
  switch (kind) {
    case AllocatorKind::complete_randomization:
      for (Eigen::Index i = 0; i < n; ++i) out.arms.push_back(competitors::complete_randomization(rng));
      break;
    case AllocatorKind::efron: {
      std::int64_t n_t = 0, n_c = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Arm a = competitors::efron_bcd(n_t, n_c, rng);
        (a == Arm::treatment ? n_t : n_c) += 1;
        out.arms.push_back(a);
      }
      break;
    }
    case AllocatorKind::stratification: {
      competitors::StratumGrid grid;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd x = covariates.row(i).transpose();
        out.blocks.push_back(grid.block(x));
        out.arms.push_back(grid.allocate(x, rng));
      }
      break;
    }
    case AllocatorKind::minimization: {
      competitors::MinimizationState state;
      for (Eigen::Index i = 0; i < n; ++i) out.arms.push_back(state.allocate(covariates.row(i).transpose(), rng));
      break;
    }
    case AllocatorKind::sequential_matching: {
      EngineConfig config;
      config.p = covariates.cols();
      config.n_target = n;
      config.lambda = lambda;
      TrialState state(config, rng());
      for (Eigen::Index i = 0; i < n; ++i) out.arms.push_back(state.allocate(covariates.row(i).transpose()).arm);
      out.split = state.finalize();
      break;
    }
  }
  return out;
}

double balance(const Eigen::MatrixXd& covariates, const std::vector<Arm>& arms) {
  if (static_cast<Eigen::Index>(arms.size()) != covariates.rows()) throw DimensionMismatch("one arm per row");
  double worst = 0.0;
  for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
    std::array<double, 2> sum{}, sumsq{};
    std::array<std::int64_t, 2> count{};
    for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
      const std::size_t k = arms[static_cast<std::size_t>(i)] == Arm::treatment ? 0 : 1;
      sum[k] += covariates(i, j);
      ++count[k];
    }
    if (count[0] < 2 || count[1] < 2) return std::numeric_limits<double>::quiet_NaN();
    const std::array<double, 2> mean{sum[0] / static_cast<double>(count[0]), sum[1] / static_cast<double>(count[1])};
    for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
      const std::size_t k = arms[static_cast<std::size_t>(i)] == Arm::treatment ? 0 : 1;
      const double d = covariates(i, j) - mean[k];
      sumsq[k] += d * d;
    }
    double se2 = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const double c = static_cast<double>(count[k]);
      se2 += sumsq[k] / (c - 1.0) / c;
    }
    if (!(se2 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::max(worst, std::abs(mean[0] - mean[1]) / (std::sqrt(2.0) * std::sqrt(se2)));
  }
  return worst;
}

TestOutcome analyze(AllocatorKind kind, TestKind test, const SimulatedTrial& trial, const AllocationResult& allocation,
                    std::int64_t mc_draws, std::uint64_t exact_seed) {
  ExactTestOptions exact;
  exact.mode = ExactMode::monte_carlo;
  exact.draws = mc_draws;
  exact.seed = exact_seed;

  if (kind == AllocatorKind::sequential_matching) {
    if (!allocation.split) throw std::invalid_argument("sequential matching allocation carries its split");
    const auto response = [&](std::int64_t id) {
      const Eigen::Index i = static_cast<Eigen::Index>(id - 1);
      return trial.response(i, allocation.arms[static_cast<std::size_t>(i)]);
    };
    const AnalysisSamples s = make_samples(*allocation.split, response);
    switch (test) {
      case TestKind::classic: return from_estimate(classic_combined(s.pairs, s.reservoir));
      case TestKind::linear: return from_estimate(ols_combined(s.pairs, s.reservoir));
      case TestKind::exact: {
        const TestResult r = exact_test(s.pairs, s.reservoir, 0.0, exact);
        return {r.statistic, std::nullopt, r.p_value};
      }
    }
  }

  switch (test) {
    case TestKind::classic: return from_estimate(classic_combined(PairedSample{}, two_sample(trial, allocation.arms)));
    case TestKind::linear: return competitor_linear(trial, allocation);
    case TestKind::exact: {
      const TestResult r = exact_test(PairedSample{}, two_sample(trial, allocation.arms), 0.0, exact);
      return {r.statistic, std::nullopt, r.p_value};
    }
  }
  throw std::invalid_argument("unknown test");
}

Interval binomial_ci(std::int64_t successes, std::int64_t trials) {
  if (trials <= 0) return {0.0, 1.0};
  const double p = static_cast<double>(successes) / static_cast<double>(trials);
  const double half = 1.959963984540054 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
  return {std::max(0.0, p - half), std::min(1.0, p + half)};
}

double relative_efficiency(double var_competitor, double var_reference) {
  if (!(var_reference > 0.0)) throw DomainError("reference variance must be positive");
  return var_competitor / var_reference;
}

double variance_ratio_p_value(double var_a, double var_b, std::int64_t df_a, std::int64_t df_b) {
  if (df_a < 1 || df_b < 1) throw InsufficientData("variance ratio needs df >= 1 on both sides");
  if (!(var_a > 0.0) || !(var_b > 0.0)) throw DomainError("variances must be positive");
  const double f = var_a / var_b;
  const double lower = numstat::f_cdf(f, static_cast<double>(df_a), static_cast<double>(df_b));
  return std::min(1.0, 2.0 * std::min(lower, 1.0 - lower));
}

const CellResult* SimReport::find(Scenario s, std::int64_t n, AllocatorKind a, TestKind t) const {
  for (const auto& c : cells)
    if (c.scenario == s && c.n == n && c.allocator == a && c.test == t) return &c;
  return nullptr;
}

void SimReport::write_csv(std::ostream& out) const {
  out << "scenario,n,lambda,beta_t,allocator,test,replications,completed,excluded,flagged,rejections,"
         "rejection_rate,ci_low,ci_high,mean_estimate,empirical_se,mean_balance,efficiency_vs_sm,"
         "efficiency_p_value,efficiency_flag\n";
  out << std::setprecision(10);
  for (const auto& c : cells) {
    out << to_string(c.scenario) << ',' << c.n << ',' << c.lambda << ',' << c.beta_t << ',' << to_string(c.allocator)
        << ',' << to_string(c.test) << ',' << c.replications << ',' << c.completed << ',' << c.excluded << ','
        << (c.flagged ? 1 : 0) << ',' << c.rejections << ',' << c.rejection_rate << ',' << c.rejection_ci.low << ','
        << c.rejection_ci.high << ',' << c.mean_estimate << ',' << c.empirical_se << ',' << c.mean_balance << ',';
    if (c.efficiency_vs_sm) out << *c.efficiency_vs_sm;
    out << ',';
    if (c.efficiency_p_value) out << *c.efficiency_p_value;
    out << ',' << c.efficiency_flag << '\n';
  }
}

void SimReport::write_summary(std::ostream& out) const {
  const auto flags = out.flags();
  out << std::left << std::setw(4) << "scn" << std::setw(6) << "n" << std::setw(7) << "alloc" << std::setw(9) << "test"
      << std::right << std::setw(8) << "reject" << std::setw(8) << "mean" << std::setw(8) << "emp_se" << std::setw(8)
      << "bal" << std::setw(8) << "eff" << "  flag\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& c : cells) {
    out << std::left << std::setw(4) << to_string(c.scenario) << std::setw(6) << c.n << std::setw(7)
        << to_string(c.allocator) << std::setw(9) << to_string(c.test) << std::right << std::setw(8) << c.rejection_rate
        << std::setw(8) << c.mean_estimate << std::setw(8) << c.empirical_se << std::setw(8) << c.mean_balance;
    if (c.efficiency_vs_sm) {
      out << std::setw(8) << *c.efficiency_vs_sm;
    } else {
      out << std::setw(8) << "-";
    }
    out << "  " << c.efficiency_flag;
    if (c.flagged) out << " excluded=" << c.excluded;
    out << '\n';
  }
  out.flags(flags);
}

SimReport run_grid(const GridSpec& grid) {
  SimReport report;
  for (const ScenarioSpec& spec : grid.specs) {
    spec.validate();
    const std::vector<RepResult> reps = run_spec(spec, grid);
    const std::size_t first = report.cells.size();
    std::array<std::array<double, 3>, 5> variances{};
    std::array<std::array<std::int64_t, 3>, 5> completed{};
    for (AllocatorKind kind : grid.allocators) {
      const std::size_t ai = index(kind);
      std::vector<double> balances;
      for (const auto& r : reps)
        if (std::isfinite(r.balance[ai])) balances.push_back(r.balance[ai]);
      const double mean_balance = moments(balances).mean;
      for (TestKind test : grid.tests) {
        const std::size_t ti = index(test);
        CellResult cell;
        cell.scenario = spec.scenario;
        cell.n = spec.n;
        cell.lambda = spec.lambda;
        cell.beta_t = spec.beta_t;
        cell.allocator = kind;
        cell.test = test;
        cell.replications = spec.replications;
        std::vector<double> estimates;
        for (const auto& r : reps) {
          const RepOutcome& o = r.outcomes[ai][ti];
          if (!o.ok) continue;
          estimates.push_back(o.estimate);
          cell.rejections += o.rejected ? 1 : 0;
        }
        const Moments m = moments(estimates);
        cell.completed = m.count;
        cell.excluded = cell.replications - cell.completed;
        cell.flagged = 100 * cell.excluded >= cell.replications;
        cell.rejection_rate =
            cell.completed > 0 ? static_cast<double>(cell.rejections) / static_cast<double>(cell.completed) : 0.0;
        cell.rejection_ci = binomial_ci(cell.rejections, cell.completed);
        cell.mean_estimate = m.mean;
        cell.empirical_se = std::sqrt(m.variance);
        cell.mean_balance = mean_balance;
        variances[ai][ti] = m.variance;
        completed[ai][ti] = m.count;
        report.cells.push_back(cell);
      }
    }
    const std::size_t sm = index(AllocatorKind::sequential_matching);
    for (std::size_t k = first; k < report.cells.size(); ++k) {
      CellResult& cell = report.cells[k];
      const std::size_t ai = index(cell.allocator);
      const std::size_t ti = index(cell.test);
      if (ai == sm || completed[sm][ti] < 2 || completed[ai][ti] < 2) continue;
      if (!(variances[sm][ti] > 0.0) || !(variances[ai][ti] > 0.0)) continue;
      cell.efficiency_vs_sm = relative_efficiency(variances[ai][ti], variances[sm][ti]);
      cell.efficiency_p_value =
          variance_ratio_p_value(variances[ai][ti], variances[sm][ti], completed[ai][ti] - 1, completed[sm][ti] - 1);
      if (*cell.efficiency_p_value < 0.01) {
        cell.efficiency_flag = *cell.efficiency_vs_sm > 1.0 ? "sm_better" : "sm_worse";
      } else {
        cell.efficiency_flag = "ns";
      }
    }
  }
  return report;
}

}  // namespace seqmatch::simlab
