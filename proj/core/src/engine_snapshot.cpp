#include "seqmatch/engine_snapshot.hpp"

#include <stdexcept>

namespace seqmatch {
namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index dim) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) throw std::invalid_argument("bad matrix shape");
  Eigen::MatrixXd m(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    const Eigen::VectorXd row = vector_from(j.at(static_cast<std::size_t>(r)));
    if (row.size() != dim) throw std::invalid_argument("bad matrix shape");
    m.row(r) = row.transpose();
  }
  return m;
}

Arm arm_from(const json& j) {
  auto arm = parse_arm(j.get<std::string>());
  if (!arm) throw std::invalid_argument("unknown arm code");
  return *arm;
}

}  // namespace

json to_snapshot(const TrialState& state) {
  const EngineConfig& cfg = state.config();
  json subjects = json::array();
  for (const Subject& s : state.subjects()) {
    subjects.push_back({
        {"id", s.id},
        {"covariates", vector_json(s.covariates)},
        {"arm", std::string(1, arm_code(*s.arm))},
        {"match_partner", s.partner ? json(*s.partner) : json(nullptr)},
    });
  }
  json matches = json::array();
  for (auto [a, b] : state.matches()) matches.push_back({a, b});

  return {
      {"format", kSnapshotFormat},
      {"version", kSnapshotVersion},
      {"config",
       {{"p", cfg.p}, {"n_target", cfg.n_target}, {"lambda", cfg.lambda}, {"pinv_tolerance", cfg.pinv_tolerance}}},
      {"rng", {{"key", state.rng().key()}, {"counter", state.rng().counter()}}},
      {"cov",
       {{"count", state.cov().count()},
        {"mean", vector_json(state.cov().mean())},
        {"scatter", matrix_json(state.cov().scatter())}}},
      {"t", state.t()},
      {"subjects", std::move(subjects)},
      {"reservoir", state.reservoir()},
      {"matches", std::move(matches)},
  };
}

TrialState from_snapshot(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kSnapshotFormat) throw std::invalid_argument("not a trial snapshot");
    if (doc.at("version").get<int>() != kSnapshotVersion) throw std::invalid_argument("unsupported snapshot version");

    TrialState::Parts parts;
    const json& cfg = doc.at("config");
    parts.config.p = cfg.at("p").get<Eigen::Index>();
    parts.config.n_target = cfg.at("n_target").get<std::int64_t>();
    parts.config.lambda = cfg.at("lambda").get<double>();
    parts.config.pinv_tolerance = cfg.at("pinv_tolerance").get<double>();
    parts.config.validate();

    parts.rng = CounterRng(doc.at("rng").at("key").get<std::uint64_t>(), doc.at("rng").at("counter").get<std::uint64_t>());

    const json& cov = doc.at("cov");
    parts.cov = numstat::CovAccumulator(cov.at("count").get<std::int64_t>(), vector_from(cov.at("mean")),
                                        matrix_from(cov.at("scatter"), parts.config.p));

    for (const json& s : doc.at("subjects")) {
      Subject subject;
      subject.id = s.at("id").get<std::int64_t>();
      subject.covariates = vector_from(s.at("covariates"));
      subject.arm = arm_from(s.at("arm"));
      if (!s.at("match_partner").is_null()) subject.partner = s.at("match_partner").get<std::int64_t>();
      parts.subjects.push_back(std::move(subject));
    }
    parts.reservoir = doc.at("reservoir").get<std::vector<std::int64_t>>();
    for (const json& m : doc.at("matches")) {
      parts.matches.emplace_back(m.at(0).get<std::int64_t>(), m.at(1).get<std::int64_t>());
    }
    if (doc.at("t").get<std::int64_t>() != static_cast<std::int64_t>(parts.subjects.size())) {
      throw std::invalid_argument("snapshot t disagrees with subject count");
    }
    return TrialState(std::move(parts));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed trial snapshot: ") + e.what());
  }
}

std::string snapshot_bytes(const TrialState& state) { return to_snapshot(state).dump(); }

json to_json(const AllocationDecision& d) {
  return {
      {"subject_id", d.subject_id},
      {"arm", std::string(1, arm_code(d.arm))},
      {"matched", d.matched},
      {"partner", d.partner ? json(*d.partner) : json(nullptr)},
      {"min_stat", d.min_stat ? json(*d.min_stat) : json(nullptr)},
      {"threshold", d.threshold ? json(*d.threshold) : json(nullptr)},
  };
}

}  // namespace seqmatch
