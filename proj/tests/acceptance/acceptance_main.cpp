// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "seqmatch/chain.hpp"
#include "seqmatch/engine.hpp"
#include "seqmatch/engine_snapshot.hpp"
#include "seqmatch/estimators.hpp"
#include "seqmatch/inference.hpp"
#include "seqmatch/replay.hpp"
#include "seqmatch/rng.hpp"
#include "seqmatch/service/trial_service.hpp"
#include "seqmatch/simlab.hpp"

using namespace seqmatch;
using namespace seqmatch::simlab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail, double seconds) {
  std::printf("criterion %2d: %s  %s  [%.1fs]\n", id, pass ? "PASS" : "FAIL", detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <typename F>
void run(int id, F f) {
  const auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = f(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(id, pass, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

bool chain_exactness(std::string& detail) {
  double worst = 0.0;
  for (int k = 2; k <= 40; k += 2) {
    worst = std::max(worst, std::fabs(chain_stationary(chain_transition(k)).mean_items - k / 2.0));
  }
  const double at_tenth = chain_stationary(chain_for_lambda(0.10)).mean_items;
  detail = fmt("max |E[items] - K/2| = %.2e over K=2..40; lambda=0.10 mean = %.15f", worst, at_tenth);
  return worst <= 1e-10 && std::fabs(at_tenth - 5.0) <= 1e-12;
}

bool engine_steady_state(std::string& detail) {
  const std::int64_t n = 5000;
  const int runs = 20;
  double total = 0.0;
  std::int64_t steps = 0;
  for (int r = 0; r < runs; ++r) {
    TrialState state(EngineConfig{1, n, 0.10}, derive_seed(2, static_cast<std::uint64_t>(r)));
    CounterRng data(derive_seed(3, static_cast<std::uint64_t>(r)));
    for (std::int64_t t = 1; t <= n; ++t) {
      state.allocate(Eigen::VectorXd::Constant(1, data.normal()));
      if (t > n / 2) {
        total += static_cast<double>(state.reservoir().size());
        ++steps;
      }
    }
  }
  const double mean = total / static_cast<double>(steps);
  detail = fmt("mean reservoir size over final 2500 steps = %.3f (target [3.5, 6.5])", mean);
  return mean >= 3.5 && mean <= 6.5;
}

// Shared NL run for criteria 3 and 4.
SimReport nl_report() {
  ScenarioSpec spec;
  spec.scenario = Scenario::nl;
  spec.n = 100;
  spec.sigma2_e = 3.0;
  spec.lambda = 0.10;
  spec.beta_t = 1.0;
  spec.replications = 500;
  spec.mc_draws = 1000;
  spec.seed = 31;
  GridSpec grid;
  grid.specs = {spec};
  grid.tests = {TestKind::classic, TestKind::exact};
  grid.workers = workers();
  return run_grid(grid);
}

bool nl_efficiency(const SimReport& rep, std::string& detail) {
  const auto* cr = rep.find(Scenario::nl, 100, AllocatorKind::complete_randomization, TestKind::classic);
  if (!cr || !cr->efficiency_vs_sm) {
    detail = "missing CR cell";
    return false;
  }
  detail = fmt("var(CR classic) / var(SM classic) = %.3f (need >= 1.5)", *cr->efficiency_vs_sm);
  return *cr->efficiency_vs_sm >= 1.5;
}

bool power_ordering(const SimReport& rep, std::string& detail) {
  bool ok = true;
  for (TestKind test : {TestKind::classic, TestKind::exact}) {
    const auto* sm = rep.find(Scenario::nl, 100, AllocatorKind::sequential_matching, test);
    detail += std::string(to_string(test)) + ": SM " + fmt("%.3f", sm->rejection_rate);
    for (AllocatorKind a : kAllAllocators) {
      if (a == AllocatorKind::sequential_matching) continue;
      const auto* c = rep.find(Scenario::nl, 100, a, test);
      const double pooled = static_cast<double>(sm->rejections + c->rejections) /
                            static_cast<double>(sm->completed + c->completed);
      const double se = std::sqrt(pooled * (1.0 - pooled) *
                                  (1.0 / static_cast<double>(sm->completed) + 1.0 / static_cast<double>(c->completed)));
      const bool beats = sm->rejection_rate - c->rejection_rate > 2.0 * se;
      ok = ok && beats;
      detail += std::string(" ") + std::string(to_string(a)) + fmt(" %.3f", c->rejection_rate) + (beats ? "" : "(!)");
    }
    detail += "; ";
  }
  return ok;
}

bool size_control(std::string& detail) {
  bool ok = true;
  for (std::int64_t n : {50, 100}) {
    ScenarioSpec spec;
    spec.scenario = Scenario::ze;
    spec.beta_t = 0.0;
    spec.n = n;
    spec.replications = 1000;
    spec.mc_draws = 1000;
    spec.seed = 57;
    GridSpec grid;
    grid.specs = {spec};
    grid.allocators = {AllocatorKind::sequential_matching};
    grid.tests = {TestKind::classic, TestKind::exact};
    grid.workers = workers();
    const SimReport rep = run_grid(grid);
    const auto* exact = rep.find(Scenario::ze, n, AllocatorKind::sequential_matching, TestKind::exact);
    const bool exact_ok = exact->rejection_rate >= 0.035 && exact->rejection_rate <= 0.065;
    ok = ok && exact_ok;
    detail += fmt("n=%.0f exact %.3f", static_cast<double>(n), exact->rejection_rate);
    if (n == 50) {
      const auto* z = rep.find(Scenario::ze, n, AllocatorKind::sequential_matching, TestKind::classic);
      const bool z_ok = z->rejection_rate >= 0.05 && z->rejection_rate <= 0.10;
      ok = ok && z_ok;
      detail += fmt(", classic z %.3f", z->rejection_rate);
    }
    detail += "; ";
  }
  return ok;
}

bool balance_monotone(std::string& detail) {
  const std::int64_t ns[] = {50, 100, 200};
  const double targets[] = {0.587, 0.497, 0.419};
  double means[3];
  bool ok = true;
  for (int i = 0; i < 3; ++i) {
    double total = 0.0;
    std::int64_t count = 0;
    for (Scenario s : {Scenario::nl, Scenario::li, Scenario::ze}) {
      for (int r = 0; r < 400; ++r) {
        ScenarioSpec spec;
        spec.scenario = s;
        spec.n = ns[i];
        CounterRng rng(derive_seed(71, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(ns[i]),
                                   static_cast<std::uint64_t>(r)));
        const SimulatedTrial trial = generate_trial(spec, rng);
        CounterRng alloc_rng = rng.split(1);
        const auto alloc = allocate_trial(AllocatorKind::sequential_matching, trial.covariates, 0.10, alloc_rng);
        const double b = balance(trial.covariates, alloc.arms);
        if (std::isnan(b)) continue;
        total += b;
        ++count;
      }
    }
    means[i] = total / static_cast<double>(count);
    ok = ok && count >= 1000 && std::fabs(means[i] - targets[i]) <= 0.12;
  }
  ok = ok && means[0] > means[1] && means[1] > means[2];
  detail = fmt("SM balance n=50/100/200: %.3f / %.3f / %.3f", means[0], means[1], means[2]);
  return ok;
}

bool permutation_oracle(std::string& detail) {
  CounterRng rng(101);
  int bad = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto nt = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto nc = static_cast<Eigen::Index>(1 + rng.below(4));
    const double effect = rng.uniform() * 2.0;
    PairedSample pairs;
    pairs.differences.resize(m);
    pairs.diff_covariates.resize(m, 0);
    for (Eigen::Index k = 0; k < m; ++k) pairs.differences[k] = effect + rng.normal();
    ReservoirSample res;
    res.responses_t.resize(nt);
    res.responses_c.resize(nc);
    res.covariates_t.resize(nt, 0);
    res.covariates_c.resize(nc, 0);
    for (Eigen::Index i = 0; i < nt; ++i) res.responses_t[i] = effect + rng.normal();
    for (Eigen::Index i = 0; i < nc; ++i) res.responses_c[i] = rng.normal();

    ExactTestOptions full;
    full.mode = ExactMode::full;
    const double p_full = exact_test(pairs, res, 0.0, full).p_value;
    ExactTestOptions mc;
    mc.draws = 10000;
    mc.seed = derive_seed(5, static_cast<std::uint64_t>(trial));
    const double p_mc = exact_test(pairs, res, 0.0, mc).p_value;
    const double tol = 3.0 * std::sqrt(p_full * (1.0 - p_full) / 1e4);
    const double gap = std::fabs(p_mc - p_full);
    if (gap > tol) ++bad;
    if (tol > 0) worst_z = std::max(worst_z, gap / (tol / 3.0));
  }
  detail = fmt("%.0f of 50 trials outside 3 sigma; largest |MC - full| = %.2f sigma", bad, worst_z);
  return bad == 0;
}

bool estimator_algebra(std::string& detail) {
  CounterRng rng(202);
  double worst = 0.0;
  bool se_bound = true;
  for (int i = 0; i < 100000; ++i) {
    const double d = 10.0 * rng.normal();
    const double y = 10.0 * rng.normal();
    const double vp = std::exp(3.0 * rng.normal());
    const double vr = std::exp(3.0 * rng.normal());
    const Combination c = combine_components(d, vp, y, vr);
    const double precision = 1.0 / vp + 1.0 / vr;
    const double est = (d / vp + y / vr) / precision;
    const double se = std::sqrt(1.0 / precision);
    const double w = vr / (vp + vr);
    const double scale = std::max({1.0, std::fabs(d), std::fabs(y)});
    worst = std::max({worst, std::fabs(c.estimate - est) / scale, std::fabs(c.estimate - (w * d + (1 - w) * y)) / scale,
                      std::fabs(c.std_error - se) / se, std::fabs(c.weight_pairs - w)});
    se_bound = se_bound && c.std_error <= std::min(std::sqrt(vp), std::sqrt(vr)) * (1.0 + 1e-12);
  }

  double worst_ols = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto m = static_cast<Eigen::Index>(3 + rng.below(20));
    const auto nt = static_cast<Eigen::Index>(2 + rng.below(20));
    const auto nc = static_cast<Eigen::Index>(2 + rng.below(20));
    PairedSample pairs;
    pairs.differences.resize(m);
    pairs.diff_covariates.resize(m, 0);
    for (Eigen::Index k = 0; k < m; ++k) pairs.differences[k] = 1.0 + rng.normal();
    ReservoirSample res;
    res.responses_t.resize(nt);
    res.responses_c.resize(nc);
    res.covariates_t.resize(nt, 0);
    res.covariates_c.resize(nc, 0);
    for (Eigen::Index i = 0; i < nt; ++i) res.responses_t[i] = 1.0 + rng.normal();
    for (Eigen::Index i = 0; i < nc; ++i) res.responses_c[i] = rng.normal();
    const EffectEstimate a = classic_combined(pairs, res);
    const EffectEstimate b = ols_combined(pairs, res);
    worst_ols = std::max({worst_ols, std::fabs(a.estimate - b.estimate), std::fabs(a.std_error - b.std_error)});
  }
  detail = fmt("combination identities max error %.2e; OLS(p=0) vs classic max gap %.2e", worst, worst_ols) +
           (se_bound ? "; SE bound holds" : "; SE bound violated");
  return worst <= 1e-12 && se_bound && worst_ols <= 1e-10;
}

bool unbiasedness(std::string& detail) {
  ScenarioSpec spec;
  spec.scenario = Scenario::li;
  spec.n = 100;
  spec.replications = 2000;
  spec.seed = 91;
  GridSpec grid;
  grid.specs = {spec};
  grid.allocators = {AllocatorKind::sequential_matching};
  grid.tests = {TestKind::classic};
  grid.workers = workers();
  const SimReport rep = run_grid(grid);
  const auto* c = rep.find(Scenario::li, 100, AllocatorKind::sequential_matching, TestKind::classic);
  const double se_mean = c->empirical_se / std::sqrt(static_cast<double>(c->completed));
  detail = fmt("mean B_T = %.4f, SE of mean = %.4f, |bias| / SE = %.2f", c->mean_estimate, se_mean,
               std::fabs(c->mean_estimate - 1.0) / se_mean);
  return std::fabs(c->mean_estimate - 1.0) <= 3.0 * se_mean;
}

bool replay_protocol(std::string& detail) {
  CounterRng rng(404);
  std::vector<replay::HistoricalRecord> records;
  for (int i = 0; i < 400; ++i) {
    replay::HistoricalRecord r;
    const double x1 = rng.normal();
    const double x2 = rng.normal();
    r.covariates = Eigen::Vector2d(x1, x2);
    r.original_arm = rng.bernoulli(0.5) ? Arm::treatment : Arm::control;
    r.response = (r.original_arm == Arm::treatment ? 1.0 : 0.0) + covariate_effect(Scenario::nl, x1, x2) +
                 std::sqrt(3.0) * rng.normal();
    records.push_back(r);
  }
  replay::StudyOptions opt;
  opt.replay.lambda = 0.10;
  opt.n_values = {50};
  opt.runs = 200;
  opt.seed = 405;
  opt.workers = workers();
  const auto row = replay::replay_study(records, opt).rows.at(0);
  detail = fmt("discard fraction %.3f, mean efficiency %.3f, mean actual n %.1f, excluded runs %.0f",
               row.discard_fraction, row.mean_efficiency, row.mean_actual_n, static_cast<double>(row.excluded));
  return row.discard_fraction >= 0.4 && row.discard_fraction <= 0.6 && row.mean_efficiency > 1.0;
}

// Crash recovery: a child process enrolls subjects and is SIGKILLed at a
// random moment; the parent restarts from the log and compares snapshots
// with an uninterrupted engine fed the same inputs.
constexpr std::int64_t kRecoveryN = 150;

Eigen::VectorXd recovery_input(std::int64_t i) {
  CounterRng rng(derive_seed(808, static_cast<std::uint64_t>(i)));
  return Eigen::Vector2d(rng.normal(), rng.normal());
}

nlohmann::json recovery_spec() {
  return {{"trial_id", "crash"},
          {"covariates", {{{"name", "a"}, {"type", "continuous"}}, {{"name", "b"}, {"type", "continuous"}}}},
          {"n_target", kRecoveryN},
          {"lambda", 0.10},
          {"seed", 99}};
}

[[noreturn]] void recovery_child(const fs::path& dir, int ack_fd) {
  service::TrialService svc({dir});
  for (std::int64_t i = 0; i < kRecoveryN; ++i) {
    const Eigen::VectorXd x = recovery_input(i);
    svc.enroll("crash", {{"covariates", {x[0], x[1]}}});
    const std::int64_t done = i + 1;
    if (::write(ack_fd, &done, sizeof done) != sizeof done) _exit(3);
  }
  _exit(0);
}

bool crash_recovery(std::string& detail) {
  const fs::path root = fs::temp_directory_path() / ("seqmatch_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);

  std::vector<std::string> reference;
  {
    TrialState state(EngineConfig{2, kRecoveryN, 0.10}, 99);
    reference.push_back(snapshot_bytes(state));
    for (std::int64_t i = 0; i < kRecoveryN; ++i) {
      state.allocate(recovery_input(i));
      reference.push_back(snapshot_bytes(state));
    }
  }

  auto attempt = [&](const fs::path& dir, std::int64_t kill_after_us, std::int64_t& acked,
                     std::int64_t& recovered) -> bool {
    fs::create_directories(dir);
    { service::TrialService(service::ServiceOptions{dir}).create_trial(recovery_spec()); }
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      ::close(fds[0]);
      recovery_child(dir, fds[1]);
    }
    ::close(fds[1]);
    if (kill_after_us >= 0) {
      std::this_thread::sleep_for(std::chrono::microseconds(kill_after_us));
      ::kill(pid, SIGKILL);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    acked = 0;
    std::int64_t v = 0;
    while (::read(fds[0], &v, sizeof v) == sizeof v) acked = v;
    ::close(fds[0]);

    service::TrialService svc({dir});
    const std::string snap = svc.snapshot("crash");
    recovered = svc.state("crash")["t"].get<std::int64_t>();
    if (recovered < acked || recovered > kRecoveryN) return false;
    if (snap != reference[static_cast<std::size_t>(recovered)]) return false;
    // The recovered trial must keep going exactly like the uninterrupted one.
    for (std::int64_t i = recovered; i < std::min(recovered + 3, kRecoveryN); ++i) {
      const Eigen::VectorXd x = recovery_input(i);
      svc.enroll("crash", {{"covariates", {x[0], x[1]}}});
    }
    const std::int64_t t = svc.state("crash")["t"].get<std::int64_t>();
    return svc.snapshot("crash") == reference[static_cast<std::size_t>(t)];
  };

  // Calibrate the kill window on one uninterrupted run.
  const auto start = std::chrono::steady_clock::now();
  std::int64_t acked = 0, recovered = 0;
  bool ok = attempt(root / "full", -1, acked, recovered) && recovered == kRecoveryN;
  const auto full_us =
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();

  std::mt19937_64 gen(1234);
  std::uniform_int_distribution<std::int64_t> delay(0, std::max<std::int64_t>(1, full_us));
  int bad = 0, interior = 0;
  for (int k = 0; k < 100; ++k) {
    const fs::path dir = root / ("kill" + std::to_string(k));
    if (!attempt(dir, delay(gen), acked, recovered)) ++bad;
    if (recovered > 0 && recovered < kRecoveryN) ++interior;
    fs::remove_all(dir);
  }
  fs::remove_all(root);
  detail = fmt("%.0f of 100 kill-points failed; %.0f killed mid-trial; full run %.0f ms", bad, interior,
               static_cast<double>(full_us) / 1000.0);
  return ok && bad == 0;
}

}  // namespace

int main() {
  std::printf("seqmatch acceptance run\n");
  run(1, chain_exactness);
  run(2, engine_steady_state);
  SimReport nl;
  run(3, [&](std::string& d) {
    nl = nl_report();
    return nl_efficiency(nl, d);
  });
  run(4, [&](std::string& d) { return !nl.cells.empty() && power_ordering(nl, d); });
  run(5, size_control);
  run(6, balance_monotone);
  run(7, permutation_oracle);
  run(8, estimator_algebra);
  run(9, unbiasedness);
  run(10, replay_protocol);
  // Every worker pool above has been joined, so forking is safe here.
  run(11, crash_recovery);
  std::printf("criterion 12: SKIP  console end-to-end belongs to the secondary component\n");
  std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
