#include "seqmatch/replay.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "seqmatch/error.hpp"
#include "seqmatch/io/csv.hpp"
#include "seqmatch/numstat/covariance.hpp"
#include "seqmatch/numstat/linalg.hpp"
#include "seqmatch/rng.hpp"

namespace seqmatch::replay {
namespace {

bool is_missing(const std::string& v) { return v.empty() || v == "NA" || v == "NaN" || v == "nan" || v == "."; }

double parse_number(const std::string& v, std::size_t line, const std::string& column) {
  if (is_missing(v)) {
    throw std::invalid_argument("line " + std::to_string(line) + ": missing value in column '" + column + "'");
  }
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("line " + std::to_string(line) + ": not a number in column '" + column + "': " + v);
  }
  return out;
}

std::size_t require_column(const io::CsvTable& table, const std::string& name) {
  const auto c = table.column(name);
  if (!c) throw std::invalid_argument("no column named '" + name + "'");
  return *c;
}

struct RunSummary {
  bool ok = false;
  std::int64_t actual_n = 0;
  std::int64_t attempts = 0;
  std::int64_t discarded = 0;
  double efficiency = 0.0;
  std::string trace;
};

RunSummary run_subset(const std::vector<HistoricalRecord>& records, std::int64_t n, std::int64_t run,
                      const StudyOptions& options) {
  CounterRng rng(derive_seed(options.seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(run)));
  // Partial Fisher-Yates: the first n slots become a uniformly random ordered subset.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < un; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<HistoricalRecord> subset;
  subset.reserve(un);
  for (std::size_t i = 0; i < un; ++i) subset.push_back(records[order[i]]);

  const ReplayRun r = replay_once(subset, options.replay);
  RunSummary s;
  s.actual_n = r.actual_n();
  s.attempts = r.match_attempts();
  s.discarded = r.discarded;
  if (options.keep_traces) s.trace = r.trace;
  try {
    const EffectEstimate base = baseline_estimate(subset);
    const AnalysisSamples retained = r.samples(subset);
    const EffectEstimate combined = classic_combined(retained.pairs, retained.reservoir);
    const double var_combined = combined.std_error * combined.std_error;
    const double var_base = base.std_error * base.std_error;
    if (var_combined > 0.0 && var_base > 0.0) {
      s.efficiency = var_base / var_combined;
      s.ok = true;
    }
  } catch (const InsufficientData&) {
  }
  return s;
}

}  // namespace

std::vector<HistoricalRecord> load_records(std::istream& in, const ColumnMapping& mapping) {
  if (mapping.covariates.empty()) throw std::invalid_argument("select at least one covariate column");
  const io::CsvTable table = io::read_csv(in, mapping.delimiter);
  std::vector<std::size_t> cov_cols;
  for (const auto& name : mapping.covariates) cov_cols.push_back(require_column(table, name));
  const std::size_t arm_col = require_column(table, mapping.arm);
  const std::size_t resp_col = require_column(table, mapping.response);

  std::vector<HistoricalRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = r + 2;
    HistoricalRecord rec;
    rec.covariates.resize(static_cast<Eigen::Index>(cov_cols.size()));
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      rec.covariates[static_cast<Eigen::Index>(j)] = parse_number(row[cov_cols[j]], line, mapping.covariates[j]);
    }
    const std::string& arm = row[arm_col];
    if (arm == mapping.treatment_code) {
      rec.original_arm = Arm::treatment;
    } else if (arm == mapping.control_code) {
      rec.original_arm = Arm::control;
    } else if (is_missing(arm)) {
      throw std::invalid_argument("line " + std::to_string(line) + ": missing arm");
    } else {
      throw std::invalid_argument("line " + std::to_string(line) + ": unknown arm code '" + arm + "'");
    }
    rec.response = parse_number(row[resp_col], line, mapping.response);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<HistoricalRecord> load_records(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load_records(in, mapping);
}

AnalysisSamples ReplayRun::samples(const std::vector<HistoricalRecord>& records) const {
  AnalysisSamples out;
  const Eigen::Index p = records.empty() ? 0 : records.front().covariates.size();
  const auto m = static_cast<Eigen::Index>(pairs.size());
  out.pairs.differences.resize(m);
  out.pairs.diff_covariates.resize(m, p);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& [ti, ci] = pairs[static_cast<std::size_t>(k)];
    out.pairs.differences[k] = records.at(ti).response - records.at(ci).response;
    out.pairs.diff_covariates.row(k) = (records.at(ti).covariates - records.at(ci).covariates).transpose();
  }
  Eigen::Index n_t = 0;
  for (auto i : reservoir) n_t += records.at(i).original_arm == Arm::treatment;
  const Eigen::Index n_c = static_cast<Eigen::Index>(reservoir.size()) - n_t;
  auto& r = out.reservoir;
  r.responses_t.resize(n_t);
  r.responses_c.resize(n_c);
  r.covariates_t.resize(n_t, p);
  r.covariates_c.resize(n_c, p);
  Eigen::Index it = 0, ic = 0;
  for (auto i : reservoir) {
    const auto& rec = records.at(i);
    if (rec.original_arm == Arm::treatment) {
      r.responses_t[it] = rec.response;
      r.covariates_t.row(it++) = rec.covariates.transpose();
    } else {
      r.responses_c[ic] = rec.response;
      r.covariates_c.row(ic++) = rec.covariates.transpose();
    }
  }
  return out;
}

ReplayRun replay_once(const std::vector<HistoricalRecord>& records, const ReplayOptions& options) {
  if (records.empty()) throw std::invalid_argument("no records to replay");
  if (!(options.lambda > 0.0 && options.lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
  const Eigen::Index p = records.front().covariates.size();
  if (p < 1) throw std::invalid_argument("records need at least one covariate");

  numstat::CovAccumulator cov(p);
  ReplayRun run;
  run.trace.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const HistoricalRecord& rec = records[i];
    if (rec.covariates.size() != p) throw DimensionMismatch("record " + std::to_string(i) + " has wrong dimension");

    numstat::CovAccumulator next = cov;
    next.update(rec.covariates);
    const std::int64_t t = next.count();

    std::optional<MatchSearch> search;
    if (t > p && !run.reservoir.empty()) {
      const Eigen::MatrixXd s_inv = numstat::pinv(next.sample_covariance(), options.pinv_tolerance);
      std::vector<const Eigen::VectorXd*> candidates;
      candidates.reserve(run.reservoir.size());
      for (auto idx : run.reservoir) candidates.push_back(&records[idx].covariates);
      search = search_reservoir(rec.covariates, candidates, s_inv, match_threshold(p, t, options.lambda));
    }

    if (search && search->accepted) {
      const auto slot = run.reservoir.begin() + static_cast<std::ptrdiff_t>(*search->best);
      const std::size_t partner = *slot;
      const Arm required = opposite(records[partner].original_arm);
      if (rec.original_arm == required) {
        run.reservoir.erase(slot);
        if (required == Arm::treatment) {
          run.pairs.emplace_back(i, partner);
        } else {
          run.pairs.emplace_back(partner, i);
        }
        run.trace.push_back('o');
        cov = std::move(next);
      } else {
        // Partner stays in the reservoir untouched.
        ++run.discarded;
        run.trace.push_back('x');
        if (options.discarded_update_covariance) cov = std::move(next);
      }
    } else {
      run.reservoir.push_back(i);
      run.trace.push_back('.');
      cov = std::move(next);
    }
  }
  return run;
}

EffectEstimate baseline_estimate(const std::vector<HistoricalRecord>& records) {
  ReplayRun all;
  all.reservoir.resize(records.size());
  std::iota(all.reservoir.begin(), all.reservoir.end(), std::size_t{0});
  const AnalysisSamples s = all.samples(records);
  return classic_combined(PairedSample{}, s.reservoir);
}

void ReplayReport::write_csv(std::ostream& out) const {
  out << "purported_n,actual_n,efficiency,reduction_pct,discard_fraction,runs,excluded\n";
  out << std::setprecision(8);
  for (const auto& r : rows) {
    out << r.purported_n << ',' << r.mean_actual_n << ',' << r.mean_efficiency << ',' << r.reduction_pct << ','
        << r.discard_fraction << ',' << r.runs << ',' << r.excluded << '\n';
  }
}

ReplayReport replay_study(const std::vector<HistoricalRecord>& records, const StudyOptions& options) {
  if (records.empty()) throw std::invalid_argument("no records to replay");
  if (options.runs < 1) throw std::invalid_argument("runs must be positive");
  ReplayReport report;
  for (const std::int64_t n : options.n_values) {
    if (n < 1 || n > static_cast<std::int64_t>(records.size())) {
      throw InsufficientData("purported n = " + std::to_string(n) + " exceeds the " +
                             std::to_string(records.size()) + " available records");
    }
    std::vector<RunSummary> runs(static_cast<std::size_t>(options.runs));
    const unsigned workers = std::max(1u, options.workers);
    if (workers == 1) {
      for (std::int64_t r = 0; r < options.runs; ++r) runs[static_cast<std::size_t>(r)] = run_subset(records, n, r, options);
    } else {
      std::atomic<std::int64_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::int64_t r = next++; r < options.runs; r = next++) {
            try {
              runs[static_cast<std::size_t>(r)] = run_subset(records, n, r, options);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
      for (auto& th : pool) th.join();
      if (failure) std::rethrow_exception(failure);
    }

    ReplayRow row;
    row.purported_n = n;
    row.runs = options.runs;
    double actual = 0.0, eff = 0.0, reduction = 0.0;
    std::int64_t attempts = 0, discarded = 0, used = 0;
    for (auto& s : runs) {
      actual += static_cast<double>(s.actual_n);
      attempts += s.attempts;
      discarded += s.discarded;
      if (options.keep_traces) row.traces.push_back(std::move(s.trace));
      if (!s.ok) continue;
      ++used;
      eff += s.efficiency;
      reduction += 1.0 - 1.0 / s.efficiency;
    }
    row.excluded = options.runs - used;
    row.mean_actual_n = actual / static_cast<double>(options.runs);
    row.mean_efficiency = used > 0 ? eff / static_cast<double>(used) : std::nan("");
    row.reduction_pct = used > 0 ? 100.0 * reduction / static_cast<double>(used) : std::nan("");
    row.discard_fraction = attempts > 0 ? static_cast<double>(discarded) / static_cast<double>(attempts) : 0.0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace seqmatch::replay
