#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqmatch/estimators.hpp"
#include "seqmatch/inference.hpp"

namespace seqmatch::service {

enum class ErrorKind { invalid_argument, not_found, conflict, trial_complete, missing_responses, insufficient_data, storage };

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  /// Stable machine-readable code, e.g. "not_found".
  const char* code() const;
  int http_status() const;

 private:
  ErrorKind kind_;
};

enum class CovariateKind { continuous, binary };

struct CovariateField {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
};

struct TrialSpec {
  std::string trial_id;
  std::vector<CovariateField> covariates;  // p = covariates.size()
  double lambda = 0.10;
  std::int64_t n_target = 0;
  std::uint64_t seed = 0;
  /// Hide partner ids and distances from enrollment responses.
  bool mask_match_details = false;

  nlohmann::json to_json() const;
  /// Throws ServiceError(invalid_argument). Missing lambda takes `default_lambda`.
  static TrialSpec from_json(const nlohmann::json& doc, double default_lambda);
};

/// Accepted trial ids: 1 to 64 characters from [A-Za-z0-9_-].
bool valid_trial_id(const std::string& id);

struct ServiceOptions {
  std::filesystem::path data_dir;
  double default_lambda = 0.10;
};

nlohmann::json to_json(const EffectEstimate& estimate);
nlohmann::json to_json(const TestResult& result);

/// Live trials backed by one append-only event log each. The log is the
/// source of truth; in-memory state is rebuilt from it on startup.
///
/// Enrollments on one trial are serialized and each is durable before its
/// decision is returned. Different trials proceed independently.
class TrialService {
 public:
  /// Loads every trial log under data_dir (created if absent).
  explicit TrialService(ServiceOptions options);
  ~TrialService();
  TrialService(const TrialService&) = delete;
  TrialService& operator=(const TrialService&) = delete;

  /// Body: {trial_id?, covariates: [{name, type: "continuous"|"binary"}],
  /// lambda?, n_target, seed?, mask_match_details?}. Returns the state document.
  nlohmann::json create_trial(const nlohmann::json& body);

  /// Body: {covariates: [..] | {name: value}, idempotency_key?}. A repeated
  /// key returns the original decision without allocating again.
  nlohmann::json enroll(const std::string& trial_id, const nlohmann::json& body);

  nlohmann::json state(const std::string& trial_id) const;
  nlohmann::json list() const;

  /// Body: {responses: {"<subject id>": y}, method?: classic_z|ols_z|exact_mc|exact_full,
  /// beta0?, partial?, draws?, seed?, statistic?: classic|ols, conservative_t?}.
  /// Without `partial`, every allocated subject needs a response; with it,
  /// pairs missing either response and reservoir subjects without one are
  /// left out.
  nlohmann::json report(const std::string& trial_id, const nlohmann::json& body) const;

  /// Canonical engine snapshot of the trial's current state.
  std::string snapshot(const std::string& trial_id) const;

  const ServiceOptions& options() const { return options_; }

 private:
  struct Trial;
  std::shared_ptr<Trial> find(const std::string& trial_id) const;
  std::filesystem::path log_path(const std::string& trial_id) const;

  ServiceOptions options_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Trial>> trials_;
};

}  // namespace seqmatch::service
