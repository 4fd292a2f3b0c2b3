#include "seqmatch/engine.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "seqmatch/error.hpp"
#include "seqmatch/numstat/distributions.hpp"
#include "seqmatch/numstat/linalg.hpp"

namespace seqmatch {

std::optional<Arm> parse_arm(std::string_view text) {
  if (text.size() != 1) return std::nullopt;
  switch (std::toupper(static_cast<unsigned char>(text.front()))) {
    case 'T':
      return Arm::treatment;
    case 'C':
      return Arm::control;
    default:
      return std::nullopt;
  }
}

void EngineConfig::validate() const {
  if (p < 1) throw std::invalid_argument("covariate dimension p must be at least 1");
  if (n_target < 1) throw std::invalid_argument("n_target must be at least 1");
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw std::invalid_argument("lambda must lie in the open interval (0, 1), got " + std::to_string(lambda));
  }
}

double mahalanobis_stat(const Eigen::Ref<const Eigen::VectorXd>& x_a, const Eigen::Ref<const Eigen::VectorXd>& x_b,
                        const Eigen::Ref<const Eigen::MatrixXd>& s_inv) {
  if (x_a.size() != x_b.size() || s_inv.rows() != x_a.size() || s_inv.cols() != x_a.size()) {
    throw DimensionMismatch("mahalanobis_stat dimension mismatch");
  }
  const Eigen::VectorXd delta = x_a - x_b;
  return std::max(0.0, 0.5 * delta.dot(s_inv * delta));
}

double match_threshold(Eigen::Index p, std::int64_t t, double lambda) {
  if (t <= p) throw DomainError("match threshold needs t > p");
  const double pd = static_cast<double>(p);
  const double td = static_cast<double>(t);
  return pd * (td - 1.0) / (td - pd) * numstat::f_quantile(lambda, pd, td - pd);
}

MatchSearch search_reservoir(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const std::vector<const Eigen::VectorXd*>& candidates,
                             const Eigen::Ref<const Eigen::MatrixXd>& s_inv, double threshold) {
  MatchSearch result;
  result.threshold = threshold;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double stat = mahalanobis_stat(x, *candidates[i], s_inv);
    // Exact ties occur (every pair is equidistant when t = p + 1) and must
    // not be decided by rounding.
    if (!result.best || stat < result.min_stat - kTieTolerance * std::max(1.0, result.min_stat)) {
      result.best = i;
      result.min_stat = stat;
    }
  }
  result.accepted = result.best.has_value() && result.min_stat <= threshold;
  return result;
}

TrialState::TrialState(EngineConfig config, std::uint64_t seed)
    : config_(config), rng_(seed), cov_(config.p) {
  config_.validate();
}

TrialState::TrialState(Parts parts)
    : config_(parts.config),
      rng_(parts.rng),
      cov_(std::move(parts.cov)),
      subjects_(std::move(parts.subjects)),
      reservoir_(std::move(parts.reservoir)),
      matches_(std::move(parts.matches)) {
  config_.validate();
  const auto t = static_cast<std::int64_t>(subjects_.size());
  if (t > config_.n_target) throw std::invalid_argument("more subjects than n_target");
  if (cov_.dim() != config_.p || cov_.count() != t) throw std::invalid_argument("covariance state inconsistent");
  if (2 * static_cast<std::int64_t>(matches_.size()) + static_cast<std::int64_t>(reservoir_.size()) != t) {
    throw std::invalid_argument("2*matches + reservoir != t");
  }
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t i = 0; i < t; ++i) {
    const Subject& s = subjects_[static_cast<std::size_t>(i)];
    if (s.id != i + 1 || !s.arm || s.covariates.size() != config_.p) {
      throw std::invalid_argument("subject list malformed");
    }
  }
  auto check_id = [&](std::int64_t id) {
    if (id < 1 || id > t || !seen.insert(id).second) throw std::invalid_argument("subject id reused or out of range");
  };
  for (auto id : reservoir_) check_id(id);
  for (auto [a, b] : matches_) {
    check_id(a);
    check_id(b);
    if (subject(a).partner != b || subject(b).partner != a || subject(a).arm == subject(b).arm) {
      throw std::invalid_argument("match linkage inconsistent");
    }
  }
}

const Subject& TrialState::subject(std::int64_t id) const {
  if (id < 1 || id > t()) throw std::out_of_range("no subject with id " + std::to_string(id));
  return subjects_[static_cast<std::size_t>(id - 1)];
}

Arm TrialState::randomize_into_reservoir(Subject& subject) {
  const Arm arm = rng_.bernoulli(0.5) ? Arm::treatment : Arm::control;
  subject.arm = arm;
  reservoir_.push_back(subject.id);
  return arm;
}

AllocationDecision TrialState::allocate(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (complete()) throw StateError("trial already has n_target subjects");
  if (x.size() != config_.p) {
    throw DimensionMismatch("expected " + std::to_string(config_.p) + " covariates, got " + std::to_string(x.size()));
  }
  cov_.update(x);

  Subject subject;
  subject.id = t() + 1;
  subject.covariates = x;

  AllocationDecision decision;
  decision.subject_id = subject.id;

  if (subject.id <= config_.p || reservoir_.empty()) {
    decision.arm = randomize_into_reservoir(subject);
    subjects_.push_back(std::move(subject));
    return decision;
  }

  const Eigen::MatrixXd s_inv = numstat::pinv(cov_.sample_covariance(), config_.pinv_tolerance);
  std::vector<const Eigen::VectorXd*> candidates;
  candidates.reserve(reservoir_.size());
  for (auto id : reservoir_) candidates.push_back(&subjects_[static_cast<std::size_t>(id - 1)].covariates);

  const MatchSearch search =
      search_reservoir(x, candidates, s_inv, match_threshold(config_.p, subject.id, config_.lambda));
  decision.min_stat = search.min_stat;
  decision.threshold = search.threshold;

  if (search.accepted) {
    const auto slot = reservoir_.begin() + static_cast<std::ptrdiff_t>(*search.best);
    const std::int64_t partner_id = *slot;
    reservoir_.erase(slot);
    Subject& partner = subjects_[static_cast<std::size_t>(partner_id - 1)];
    subject.arm = opposite(*partner.arm);
    subject.partner = partner_id;
    partner.partner = subject.id;
    matches_.emplace_back(subject.id, partner_id);
    decision.arm = *subject.arm;
    decision.matched = true;
    decision.partner = partner_id;
  } else {
    decision.arm = randomize_into_reservoir(subject);
  }
  subjects_.push_back(std::move(subject));
  return decision;
}

TrialSplit TrialState::current_split() const {
  TrialSplit split;
  split.pairs.reserve(matches_.size());
  for (auto [entrant, partner] : matches_) {
    const Subject& a = subject(entrant);
    const Subject& b = subject(partner);
    if (a.arm == Arm::treatment) {
      split.pairs.emplace_back(a, b);
    } else {
      split.pairs.emplace_back(b, a);
    }
  }
  split.reservoir.reserve(reservoir_.size());
  for (auto id : reservoir_) split.reservoir.push_back(subject(id));
  return split;
}

TrialSplit TrialState::finalize() const {
  if (!complete()) {
    throw StateError("trial incomplete: " + std::to_string(t()) + " of " + std::to_string(config_.n_target) +
                     " subjects allocated");
  }
  return current_split();
}

}  // namespace seqmatch
