#include "seqmatch/service/trial_service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <random>
#include <set>

#include "seqmatch/engine.hpp"
#include "seqmatch/engine_snapshot.hpp"
#include "seqmatch/error.hpp"
#include "seqmatch/service/trial_store.hpp"

namespace seqmatch::service {

using nlohmann::json;

namespace {

constexpr const char* kLogSuffix = ".jsonl";

[[noreturn]] void invalid(const std::string& message) { throw ServiceError(ErrorKind::invalid_argument, message); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto millis =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(millis));
  return buf;
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::string fresh_id() {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t v = fresh_seed();
  std::string id = "trial-";
  for (int i = 0; i < 12; ++i) {
    id.push_back(kHex[v & 0xF]);
    v >>= 4;
  }
  return id;
}

double number_field(const json& v, const std::string& what) {
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  if (!v.is_number()) invalid(what + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) invalid(what + " must be finite");
  return d;
}

std::optional<std::int64_t> parse_subject_id(const std::string& key) {
  if (key.empty() || key.size() > 18) return std::nullopt;
  std::int64_t v = 0;
  for (char c : key) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

TestMethod parse_method(const std::string& s) {
  if (s == "classic_z") return TestMethod::classic_z;
  if (s == "ols_z") return TestMethod::ols_z;
  if (s == "exact_mc") return TestMethod::exact_mc;
  if (s == "exact_full") return TestMethod::exact_full;
  invalid("unknown method '" + s + "'");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

const char* ServiceError::code() const {
  switch (kind_) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::trial_complete: return "trial_complete";
    case ErrorKind::missing_responses: return "missing_responses";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::storage: return "storage";
  }
  return "error";
}

int ServiceError::http_status() const {
  switch (kind_) {
    case ErrorKind::invalid_argument: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict:
    case ErrorKind::trial_complete: return 409;
    case ErrorKind::missing_responses:
    case ErrorKind::insufficient_data: return 422;
    case ErrorKind::storage: return 500;
  }
  return 500;
}

bool valid_trial_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

json TrialSpec::to_json() const {
  json fields = json::array();
  for (const auto& f : covariates) {
    fields.push_back({{"name", f.name}, {"type", f.kind == CovariateKind::binary ? "binary" : "continuous"}});
  }
  return {{"trial_id", trial_id},   {"covariates", fields}, {"lambda", lambda},
          {"n_target", n_target},   {"seed", seed},         {"mask_match_details", mask_match_details},
          {"p", covariates.size()}};
}

TrialSpec TrialSpec::from_json(const json& doc, double default_lambda) {
  if (!doc.is_object()) invalid("trial spec must be an object");
  TrialSpec spec;
  if (doc.contains("trial_id") && !doc["trial_id"].is_null()) {
    if (!doc["trial_id"].is_string()) invalid("trial_id must be a string");
    spec.trial_id = doc["trial_id"].get<std::string>();
    if (!valid_trial_id(spec.trial_id)) invalid("trial_id must be 1-64 characters from [A-Za-z0-9_-]");
  }
  const auto fields = doc.find("covariates");
  if (fields == doc.end() || !fields->is_array() || fields->empty()) {
    invalid("covariates must be a non-empty list (p >= 1)");
  }
  std::set<std::string> names;
  for (const auto& f : *fields) {
    CovariateField field;
    if (f.is_string()) {
      field.name = f.get<std::string>();
    } else if (f.is_object() && f.contains("name") && f["name"].is_string()) {
      field.name = f["name"].get<std::string>();
      const std::string type = f.value("type", "continuous");
      if (type == "binary") {
        field.kind = CovariateKind::binary;
      } else if (type != "continuous") {
        invalid("covariate type must be continuous or binary, got '" + type + "'");
      }
    } else {
      invalid("each covariate needs a name");
    }
    if (field.name.empty()) invalid("covariate names must be non-empty");
    if (!names.insert(field.name).second) invalid("duplicate covariate name '" + field.name + "'");
    spec.covariates.push_back(field);
  }
  spec.lambda = doc.contains("lambda") && !doc["lambda"].is_null() ? number_field(doc["lambda"], "lambda")
                                                                   : default_lambda;
  if (!(spec.lambda > 0.0 && spec.lambda < 1.0)) invalid("lambda must lie in the open interval (0, 1)");
  if (!doc.contains("n_target") || !doc["n_target"].is_number_integer()) invalid("n_target must be an integer");
  spec.n_target = doc["n_target"].get<std::int64_t>();
  if (spec.n_target < 1) invalid("n_target must be positive");
  if (doc.contains("seed") && !doc["seed"].is_null()) {
    if (!doc["seed"].is_number_unsigned() && !(doc["seed"].is_number_integer() && doc["seed"].get<std::int64_t>() >= 0)) {
      invalid("seed must be a non-negative integer");
    }
    spec.seed = doc["seed"].get<std::uint64_t>();
  } else {
    spec.seed = fresh_seed();
  }
  if (doc.contains("mask_match_details")) {
    if (!doc["mask_match_details"].is_boolean()) invalid("mask_match_details must be a boolean");
    spec.mask_match_details = doc["mask_match_details"].get<bool>();
  }
  return spec;
}

json to_json(const EffectEstimate& e) {
  return {
      {"estimate", e.estimate},
      {"std_error", e.std_error},
      {"weight_pairs", e.weight_pairs},
      {"component_pairs", optional_number(e.component_pairs)},
      {"component_reservoir", optional_number(e.component_reservoir)},
      {"variance_pairs", optional_number(e.variance_pairs)},
      {"variance_reservoir", optional_number(e.variance_reservoir)},
      {"method", std::string(to_string(e.method))},
      {"pairs", e.pairs},
      {"reservoir_t", e.reservoir_t},
      {"reservoir_c", e.reservoir_c},
      {"df", e.df ? json(*e.df) : json(nullptr)},
  };
}

json to_json(const TestResult& r) {
  return {
      {"statistic", r.statistic},
      {"p_value", r.p_value},
      {"method", std::string(to_string(r.method))},
      {"mc_draws", r.mc_draws ? json(*r.mc_draws) : json(nullptr)},
      {"configurations", r.configurations ? json(*r.configurations) : json(nullptr)},
  };
}

struct TrialService::Trial {
  Trial(TrialSpec s, TrialLog l, std::string created)
      : spec(std::move(s)),
        state(EngineConfig{static_cast<Eigen::Index>(spec.covariates.size()), spec.n_target, spec.lambda}, spec.seed),
        log(std::move(l)),
        created_at(std::move(created)) {}

  struct Keyed {
    Eigen::VectorXd covariates;
    json response;
  };

  TrialSpec spec;
  TrialState state;
  TrialLog log;
  std::string created_at;
  std::map<std::string, Keyed> by_key;
  mutable std::mutex mutex;

  Eigen::VectorXd parse_covariates(const json& v) const {
    const auto p = static_cast<Eigen::Index>(spec.covariates.size());
    Eigen::VectorXd x(p);
    if (v.is_array()) {
      if (static_cast<Eigen::Index>(v.size()) != p) {
        invalid("expected " + std::to_string(p) + " covariates, got " + std::to_string(v.size()));
      }
      for (Eigen::Index j = 0; j < p; ++j) {
        x[j] = number_field(v[static_cast<std::size_t>(j)], spec.covariates[static_cast<std::size_t>(j)].name);
      }
    } else if (v.is_object()) {
      if (static_cast<Eigen::Index>(v.size()) != p) invalid("covariate object has unexpected fields");
      for (Eigen::Index j = 0; j < p; ++j) {
        const auto& name = spec.covariates[static_cast<std::size_t>(j)].name;
        if (!v.contains(name)) invalid("missing covariate '" + name + "'");
        x[j] = number_field(v[name], name);
      }
    } else {
      invalid("covariates must be a list or an object");
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& f = spec.covariates[static_cast<std::size_t>(j)];
      if (f.kind == CovariateKind::binary && x[j] != 0.0 && x[j] != 1.0) {
        invalid("binary covariate '" + f.name + "' must be 0 or 1");
      }
    }
    return x;
  }

  json decision_response(const AllocationDecision& d) const {
    json out = seqmatch::to_json(d);
    out["trial_id"] = spec.trial_id;
    out["trace"] = d.matched ? "o" : ".";
    out["t"] = state.t();
    out["n_target"] = spec.n_target;
    out["status"] = state.complete() ? "complete" : "open";
    out["reservoir_size"] = state.reservoir().size();
    out["pairs"] = state.matches().size();
    if (spec.mask_match_details) {
      for (const char* k : {"matched", "partner", "min_stat", "threshold", "trace"}) out.erase(k);
      out["masked"] = true;
    } else {
      out["masked"] = false;
    }
    return out;
  }

  json summary() const {
    return {{"trial_id", spec.trial_id},
            {"status", state.complete() ? "complete" : "open"},
            {"t", state.t()},
            {"n_target", spec.n_target},
            {"lambda", spec.lambda},
            {"p", spec.covariates.size()},
            {"pairs", state.matches().size()},
            {"reservoir_size", state.reservoir().size()},
            {"created_at", created_at}};
  }

  json full_state() const {
    json out = summary();
    json schema = spec.to_json();
    schema.erase("seed");
    out["spec"] = schema;
    out["reservoir"] = state.reservoir();
    json pairs = json::array();
    for (const auto& [t, c] : state.current_split().pairs) pairs.push_back({{"treatment", t.id}, {"control", c.id}});
    out["matches"] = pairs;
    json subjects = json::array();
    std::string trace;
    for (const auto& s : state.subjects()) {
      const bool matched_on_entry = s.partner && *s.partner < s.id;
      trace.push_back(matched_on_entry ? 'o' : '.');
      subjects.push_back({{"id", s.id},
                          {"covariates", std::vector<double>(s.covariates.data(), s.covariates.data() + s.covariates.size())},
                          {"arm", std::string(1, arm_code(*s.arm))},
                          {"partner", s.partner ? json(*s.partner) : json(nullptr)}});
    }
    out["subjects"] = subjects;
    out["trace"] = trace;
    return out;
  }
};

TrialService::TrialService(ServiceOptions options) : options_(std::move(options)) {
  if (!(options_.default_lambda > 0.0 && options_.default_lambda < 1.0)) {
    throw std::invalid_argument("default lambda must lie in (0, 1)");
  }
  std::error_code ec;
  std::filesystem::create_directories(options_.data_dir / "trials", ec);
  if (ec) throw StorageError("cannot create data directory: " + ec.message());

  for (const auto& entry : std::filesystem::directory_iterator(options_.data_dir / "trials")) {
    if (!entry.is_regular_file() || entry.path().extension() != kLogSuffix) continue;
    LogContents contents;
    TrialLog log = TrialLog::open(entry.path(), contents);
    TrialSpec spec = TrialSpec::from_json(contents.header.at("spec"), options_.default_lambda);
    auto trial = std::make_shared<Trial>(spec, std::move(log), contents.header.value("created_at", ""));
    for (const auto& ev : contents.events) {
      const Eigen::VectorXd x = trial->parse_covariates(ev.at("covariates"));
      const AllocationDecision d = trial->state.allocate(x);
      const json& logged = ev.at("decision");
      if (logged.at("subject_id") != d.subject_id || logged.at("arm") != std::string(1, arm_code(d.arm))) {
        throw StorageError("log for trial " + spec.trial_id + " does not replay to its recorded decisions");
      }
      if (ev.contains("key") && ev["key"].is_string()) {
        trial->by_key[ev["key"].get<std::string>()] = {x, trial->decision_response(d)};
      }
    }
    trials_.emplace(spec.trial_id, std::move(trial));
  }
}

TrialService::~TrialService() = default;

std::filesystem::path TrialService::log_path(const std::string& trial_id) const {
  return options_.data_dir / "trials" / (trial_id + kLogSuffix);
}

std::shared_ptr<TrialService::Trial> TrialService::find(const std::string& trial_id) const {
  std::shared_lock lock(registry_mutex_);
  const auto it = trials_.find(trial_id);
  if (it == trials_.end()) throw ServiceError(ErrorKind::not_found, "no trial '" + trial_id + "'");
  return it->second;
}

json TrialService::create_trial(const json& body) {
  TrialSpec spec = TrialSpec::from_json(body, options_.default_lambda);
  std::unique_lock lock(registry_mutex_);
  if (spec.trial_id.empty()) {
    do {
      spec.trial_id = fresh_id();
    } while (trials_.count(spec.trial_id) != 0);
  } else if (trials_.count(spec.trial_id) != 0) {
    throw ServiceError(ErrorKind::conflict, "trial '" + spec.trial_id + "' already exists");
  }
  const std::string created = utc_now();
  json header = {{"trial_id", spec.trial_id}, {"spec", spec.to_json()}, {"created_at", created}};
  TrialLog log = [&] {
    try {
      return TrialLog::create(log_path(spec.trial_id), header);
    } catch (const StorageError& e) {
      if (std::filesystem::exists(log_path(spec.trial_id))) {
        throw ServiceError(ErrorKind::conflict, "trial '" + spec.trial_id + "' already exists");
      }
      throw ServiceError(ErrorKind::storage, e.what());
    }
  }();
  auto trial = std::make_shared<Trial>(spec, std::move(log), created);
  json out = trial->full_state();
  trials_.emplace(spec.trial_id, std::move(trial));
  return out;
}

json TrialService::enroll(const std::string& trial_id, const json& body) {
  const auto trial = find(trial_id);
  if (!body.is_object() || !body.contains("covariates")) invalid("body must carry covariates");
  std::lock_guard lock(trial->mutex);
  const Eigen::VectorXd x = trial->parse_covariates(body["covariates"]);

  std::optional<std::string> key;
  if (body.contains("idempotency_key") && !body["idempotency_key"].is_null()) {
    if (!body["idempotency_key"].is_string() || body["idempotency_key"].get<std::string>().empty()) {
      invalid("idempotency_key must be a non-empty string");
    }
    key = body["idempotency_key"].get<std::string>();
    const auto it = trial->by_key.find(*key);
    if (it != trial->by_key.end()) {
      if (it->second.covariates != x) {
        throw ServiceError(ErrorKind::conflict, "idempotency key reused with different covariates");
      }
      json replay = it->second.response;
      replay["replayed"] = true;
      return replay;
    }
  }
  if (trial->state.complete()) throw ServiceError(ErrorKind::trial_complete, "trial has reached n_target");

  TrialState next = trial->state;
  const AllocationDecision d = next.allocate(x);
  json event = {{"seq", d.subject_id},
                {"type", "enroll"},
                {"key", key ? json(*key) : json(nullptr)},
                {"covariates", std::vector<double>(x.data(), x.data() + x.size())},
                {"decision", seqmatch::to_json(d)},
                {"timestamp", utc_now()}};
  try {
    trial->log.append(event);
  } catch (const StorageError& e) {
    throw ServiceError(ErrorKind::storage, e.what());
  }
  trial->state = std::move(next);
  json out = trial->decision_response(d);
  if (key) trial->by_key[*key] = {x, out};
  out["replayed"] = false;
  return out;
}

json TrialService::state(const std::string& trial_id) const {
  const auto trial = find(trial_id);
  std::lock_guard lock(trial->mutex);
  return trial->full_state();
}

json TrialService::list() const {
  std::vector<std::shared_ptr<Trial>> all;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [id, t] : trials_) all.push_back(t);
  }
  json out = json::array();
  for (const auto& t : all) {
    std::lock_guard lock(t->mutex);
    out.push_back(t->summary());
  }
  return out;
}

std::string TrialService::snapshot(const std::string& trial_id) const {
  const auto trial = find(trial_id);
  std::lock_guard lock(trial->mutex);
  return snapshot_bytes(trial->state);
}

json TrialService::report(const std::string& trial_id, const json& body) const {
  const auto trial = find(trial_id);
  if (!body.is_object()) invalid("body must be an object");
  const TestMethod method = parse_method(body.value("method", std::string("classic_z")));
  const double beta0 = body.contains("beta0") ? number_field(body["beta0"], "beta0") : 0.0;
  const bool partial = body.value("partial", false);

  TrialSplit split;
  std::uint64_t default_seed = 0;
  bool complete = false;
  {
    std::lock_guard lock(trial->mutex);
    split = trial->state.current_split();
    default_seed = derive_seed(trial->spec.seed, 0x5e55);
    complete = trial->state.complete();
  }

  std::map<std::int64_t, double> responses;
  if (body.contains("responses")) {
    const json& r = body["responses"];
    if (!r.is_object()) invalid("responses must map subject ids to numbers");
    std::set<std::int64_t> known;
    for (const auto& [t, c] : split.pairs) {
      known.insert(t.id);
      known.insert(c.id);
    }
    for (const auto& s : split.reservoir) known.insert(s.id);
    for (const auto& [k, v] : r.items()) {
      const auto id = parse_subject_id(k);
      if (!id || known.count(*id) == 0) invalid("response for unknown subject '" + k + "'");
      responses[*id] = number_field(v, "response for subject " + k);
    }
  }

  TrialSplit analyzed;
  std::vector<std::int64_t> missing;
  for (const auto& pr : split.pairs) {
    const bool have_t = responses.count(pr.first.id) != 0;
    const bool have_c = responses.count(pr.second.id) != 0;
    if (have_t && have_c) {
      analyzed.pairs.push_back(pr);
    } else {
      if (!have_t) missing.push_back(pr.first.id);
      if (!have_c) missing.push_back(pr.second.id);
    }
  }
  for (const auto& s : split.reservoir) {
    if (responses.count(s.id) != 0) {
      analyzed.reservoir.push_back(s);
    } else {
      missing.push_back(s.id);
    }
  }
  if (!partial && !missing.empty()) {
    std::sort(missing.begin(), missing.end());
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) ids += (i ? "," : "") + std::to_string(missing[i]);
    throw ServiceError(ErrorKind::missing_responses,
                       std::to_string(missing.size()) + " allocated subjects lack responses: " + ids);
  }

  const AnalysisSamples samples = make_samples(analyzed, [&](std::int64_t id) { return responses.at(id); });
  const bool use_ols = method == TestMethod::ols_z || body.value("statistic", std::string("classic")) == "ols";

  json out;
  out["trial_id"] = trial_id;
  out["trial_complete"] = complete;
  out["subjects_analyzed"] = 2 * analyzed.pairs.size() + analyzed.reservoir.size();
  out["partial"] = partial;

  std::optional<EffectEstimate> estimate;
  std::string estimate_error;
  try {
    estimate = use_ols ? ols_combined(samples.pairs, samples.reservoir) : classic_combined(samples.pairs, samples.reservoir);
  } catch (const InsufficientData& e) {
    estimate_error = e.what();
  }
  out["estimate"] = estimate ? to_json(*estimate) : json(nullptr);

  try {
    if (method == TestMethod::classic_z || method == TestMethod::ols_z) {
      if (!estimate) throw ServiceError(ErrorKind::insufficient_data, estimate_error);
      ZTestOptions z;
      z.conservative_t = body.value("conservative_t", false);
      out["test"] = to_json(z_test(*estimate, beta0, z));
    } else {
      ExactTestOptions ex;
      ex.mode = method == TestMethod::exact_full ? ExactMode::full : ExactMode::monte_carlo;
      ex.statistic = use_ols ? ExactStatistic::ols : ExactStatistic::classic;
      if (body.contains("draws")) {
        if (!body["draws"].is_number_integer() || body["draws"].get<std::int64_t>() < 1) {
          invalid("draws must be a positive integer");
        }
        ex.draws = body["draws"].get<std::int64_t>();
      }
      ex.seed = body.contains("seed") && body["seed"].is_number_unsigned() ? body["seed"].get<std::uint64_t>()
                                                                          : default_seed;
      out["test"] = to_json(exact_test(samples.pairs, samples.reservoir, beta0, ex));
    }
  } catch (const InsufficientData& e) {
    throw ServiceError(ErrorKind::insufficient_data, e.what());
  } catch (const DomainError& e) {
    throw ServiceError(ErrorKind::insufficient_data, e.what());
  } catch (const std::invalid_argument& e) {
    invalid(e.what());
  }
  return out;
}

}  // namespace seqmatch::service
