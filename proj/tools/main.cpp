#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "seqmatch/chain.hpp"
#include "seqmatch/replay.hpp"
#include "seqmatch/service/http_api.hpp"
#include "seqmatch/service/trial_service.hpp"
#include "seqmatch/simlab.hpp"

namespace {

seqmatch::service::HttpApi* g_api = nullptr;

void on_signal(int) {
  if (g_api) g_api->stop();
}

struct ServeArgs {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::string data_dir = "seqmatch-data";
  double lambda = 0.10;
  std::string token;
};

int run_serve(const ServeArgs& a) {
  seqmatch::service::TrialService service({a.data_dir, a.lambda});
  seqmatch::service::HttpApi api(service, {a.token});
  g_api = &api;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "seqmatch: serving " << service.list().size() << " trial(s) from " << a.data_dir << " on " << a.host
            << ':' << a.port << '\n';
  const bool ok = api.listen(a.host, a.port);
  g_api = nullptr;
  if (!ok) {
    std::cerr << "seqmatch: could not bind " << a.host << ':' << a.port << '\n';
    return 1;
  }
  return 0;
}

struct SimulateArgs {
  std::vector<std::string> scenarios{"NL", "LI", "ZE"};
  std::vector<std::int64_t> n_values{50, 100, 200};
  std::vector<std::string> allocators{"CR", "EFRON", "STRAT", "MIN", "SM"};
  std::vector<std::string> tests{"classic", "ols", "exact"};
  double lambda = 0.10;
  double beta_t = 1.0;
  double sigma2_e = 3.0;
  std::int64_t replications = 1000;
  std::int64_t mc_draws = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  using namespace seqmatch::simlab;
  GridSpec grid;
  grid.workers = a.workers;
  grid.allocators.clear();
  grid.tests.clear();
  for (const auto& s : a.allocators) {
    const auto k = parse_allocator(s);
    if (!k) throw CLI::ValidationError("--allocators", "unknown allocator " + s);
    grid.allocators.push_back(*k);
  }
  for (const auto& s : a.tests) {
    const auto t = parse_test(s);
    if (!t) throw CLI::ValidationError("--tests", "unknown test " + s);
    grid.tests.push_back(*t);
  }
  for (const auto& name : a.scenarios) {
    const auto sc = parse_scenario(name);
    if (!sc) throw CLI::ValidationError("--scenario", "unknown scenario " + name);
    for (auto n : a.n_values) {
      ScenarioSpec spec;
      spec.scenario = *sc;
      spec.n = n;
      spec.lambda = a.lambda;
      spec.beta_t = a.beta_t;
      spec.sigma2_e = a.sigma2_e;
      spec.replications = a.replications;
      spec.mc_draws = a.mc_draws;
      spec.alpha = a.alpha;
      spec.seed = a.seed;
      grid.specs.push_back(spec);
    }
  }
  const SimReport report = run_grid(grid);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    report.write_csv(f);
  }
  report.write_summary(std::cout);
  return 0;
}

struct ReplayArgs {
  std::string input;
  std::vector<std::string> covariates;
  std::string arm = "arm";
  std::string response = "y";
  std::string treatment_code = "T";
  std::string control_code = "C";
  char delimiter = ',';
  double lambda = 0.10;
  std::vector<std::int64_t> n_values{50};
  std::int64_t runs = 200;
  std::uint64_t seed = 1;
  bool freeze_cov_on_discard = false;
  std::string traces;
  std::string out;
};

int run_replay(const ReplayArgs& a) {
  using namespace seqmatch::replay;
  ColumnMapping mapping{a.covariates, a.arm, a.response, a.treatment_code, a.control_code, a.delimiter};
  const auto records = load_records(std::filesystem::path(a.input), mapping);
  StudyOptions opt;
  opt.replay.lambda = a.lambda;
  opt.replay.discarded_update_covariance = !a.freeze_cov_on_discard;
  opt.n_values = a.n_values;
  opt.runs = a.runs;
  opt.seed = a.seed;
  opt.keep_traces = !a.traces.empty();
  opt.workers = std::max(1u, std::thread::hardware_concurrency());
  const ReplayReport report = replay_study(records, opt);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    report.write_csv(f);
  }
  if (!a.traces.empty()) {
    std::ofstream f(a.traces);
    if (!f) throw std::runtime_error("cannot write " + a.traces);
    for (const auto& row : report.rows)
      for (const auto& t : row.traces) f << row.purported_n << ' ' << t << '\n';
  }
  std::cout << std::fixed << std::setprecision(3) << "purported_n  actual_n  efficiency  reduction%  discard\n";
  for (const auto& r : report.rows) {
    std::cout << std::setw(11) << r.purported_n << std::setw(10) << r.mean_actual_n << std::setw(12)
              << r.mean_efficiency << std::setw(12) << r.reduction_pct << std::setw(9) << r.discard_fraction << '\n';
  }
  return 0;
}

int run_chain(double lambda, int k) {
  using namespace seqmatch::simlab;
  const ReservoirChain chain = k > 0 ? chain_transition(k) : chain_for_lambda(lambda);
  const ChainStationary st = chain_stationary(chain);
  std::cout << "K = " << chain.k << "\n" << std::setprecision(12);
  std::cout << "s  pi(s)\n";
  for (Eigen::Index s = 0; s < st.distribution.size(); ++s) std::cout << s << "  " << st.distribution[s] << '\n';
  std::cout << "mean state " << st.mean_state << "\nmean reservoir items " << st.mean_items << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential matching allocation for clinical trials"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run the trial HTTP service");
  s->add_option("--host", serve.host, "Bind address")->capture_default_str();
  s->add_option("--port", serve.port, "Port")->envname("SEQMATCH_PORT")->capture_default_str();
  s->add_option("--data-dir", serve.data_dir, "Directory holding trial logs")
      ->envname("SEQMATCH_DATA_DIR")
      ->capture_default_str();
  s->add_option("--lambda", serve.lambda, "Default lambda for new trials")
      ->envname("SEQMATCH_LAMBDA")
      ->capture_default_str();
  s->add_option("--token", serve.token, "Static bearer token required on /trials")->envname("SEQMATCH_TOKEN");

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "Run the allocation/testing simulation grid");
  m->add_option("--scenario", sim.scenarios, "NL, LI and/or ZE")->delimiter(',')->capture_default_str();
  m->add_option("--n", sim.n_values, "Sample sizes")->delimiter(',')->capture_default_str();
  m->add_option("--allocators", sim.allocators, "CR, EFRON, STRAT, MIN, SM")->delimiter(',')->capture_default_str();
  m->add_option("--tests", sim.tests, "classic, ols, exact")->delimiter(',')->capture_default_str();
  m->add_option("--lambda", sim.lambda)->envname("SEQMATCH_LAMBDA")->capture_default_str();
  m->add_option("--beta-t", sim.beta_t, "True treatment effect")->capture_default_str();
  m->add_option("--sigma2", sim.sigma2_e, "Noise variance")->capture_default_str();
  m->add_option("--reps", sim.replications)->capture_default_str();
  m->add_option("--mc-draws", sim.mc_draws, "Monte-Carlo draws for the exact test")->capture_default_str();
  m->add_option("--alpha", sim.alpha)->capture_default_str();
  m->add_option("--seed", sim.seed)->capture_default_str();
  m->add_option("--workers", sim.workers)->capture_default_str();
  m->add_option("--out", sim.out, "CSV output path");

  ReplayArgs rep;
  auto* r = app.add_subcommand("replay", "Replay a historical trial through sequential matching");
  r->add_option("--input", rep.input, "Delimited input file")->required()->check(CLI::ExistingFile);
  r->add_option("--covariates", rep.covariates, "Covariate columns")->delimiter(',')->required();
  r->add_option("--arm", rep.arm, "Arm column")->capture_default_str();
  r->add_option("--response", rep.response, "Response column")->capture_default_str();
  r->add_option("--treatment-code", rep.treatment_code)->capture_default_str();
  r->add_option("--control-code", rep.control_code)->capture_default_str();
  r->add_option("--delimiter", rep.delimiter)->capture_default_str();
  r->add_option("--lambda", rep.lambda)->envname("SEQMATCH_LAMBDA")->capture_default_str();
  r->add_option("--n", rep.n_values, "Purported sample sizes")->delimiter(',')->capture_default_str();
  r->add_option("--runs", rep.runs)->capture_default_str();
  r->add_option("--seed", rep.seed)->capture_default_str();
  r->add_flag("--freeze-cov-on-discard", rep.freeze_cov_on_discard,
              "Do not let discarded entrants update the covariance");
  r->add_option("--traces", rep.traces, "Write per-run traces to this file");
  r->add_option("--out", rep.out, "CSV output path");

  double chain_lambda = 0.10;
  int chain_k = 0;
  auto* c = app.add_subcommand("chain", "Stationary analysis of the reservoir occupancy chain");
  c->add_option("--lambda", chain_lambda)->capture_default_str();
  c->add_option("--k", chain_k, "Number of cells (overrides --lambda)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_serve(serve);
    if (*m) return run_simulate(sim);
    if (*r) return run_replay(rep);
    if (*c) return run_chain(chain_lambda, chain_k);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "seqmatch: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
