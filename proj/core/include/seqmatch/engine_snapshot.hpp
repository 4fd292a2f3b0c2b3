#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "seqmatch/engine.hpp"

namespace seqmatch {

inline constexpr const char* kSnapshotFormat = "seqmatch.trial_state";
inline constexpr int kSnapshotVersion = 1;

/// Self-describing, versioned document holding the complete allocator state.
/// Integers round-trip exactly, doubles at full precision.
nlohmann::json to_snapshot(const TrialState& state);

/// Throws std::invalid_argument for an unknown format/version or a document
/// that violates the state invariants.
TrialState from_snapshot(const nlohmann::json& doc);

/// Canonical serialized form (compact dump); equal states give equal bytes.
std::string snapshot_bytes(const TrialState& state);

nlohmann::json to_json(const AllocationDecision& decision);

}  // namespace seqmatch
