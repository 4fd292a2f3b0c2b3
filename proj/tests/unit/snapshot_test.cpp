#include <gtest/gtest.h>

#include "seqmatch/engine_snapshot.hpp"
#include "seqmatch/rng.hpp"

using namespace seqmatch;

namespace {

TrialState grown(std::int64_t steps, std::uint64_t seed) {
  EngineConfig c;
  c.p = 2;
  c.n_target = 60;
  c.lambda = 0.15;
  TrialState s(c, seed);
  CounterRng rng(seed + 1);
  for (std::int64_t i = 0; i < steps; ++i) s.allocate(Eigen::Vector2d(rng.normal(), rng.normal() * 1e-3 + 1.0 / 3.0));
  return s;
}

}  // namespace

TEST(Snapshot, RoundTripIsByteExactAndContinuesIdentically) {
  for (std::int64_t steps : {0, 1, 2, 17, 59}) {
    TrialState a = grown(steps, 4);
    const std::string bytes = snapshot_bytes(a);
    TrialState b = from_snapshot(nlohmann::json::parse(bytes));
    EXPECT_EQ(snapshot_bytes(b), bytes);
    CounterRng rng(77);
    while (!a.complete()) {
      const Eigen::Vector2d x(rng.normal(), rng.normal());
      const auto da = a.allocate(x);
      const auto db = b.allocate(x);
      ASSERT_EQ(da.arm, db.arm);
      ASSERT_EQ(da.partner, db.partner);
    }
    EXPECT_EQ(snapshot_bytes(a), snapshot_bytes(b));
  }
}

TEST(Snapshot, SelfDescribing) {
  const auto doc = to_snapshot(grown(5, 1));
  EXPECT_EQ(doc.at("format"), kSnapshotFormat);
  EXPECT_EQ(doc.at("version"), kSnapshotVersion);
}

TEST(Snapshot, RejectsUnknownVersionAndBrokenInvariants) {
  auto doc = to_snapshot(grown(10, 2));
  auto wrong = doc;
  wrong["version"] = 99;
  EXPECT_THROW(from_snapshot(wrong), std::invalid_argument);
  auto broken = doc;
  broken["reservoir"].push_back(1);
  EXPECT_THROW(from_snapshot(broken), std::invalid_argument);
}
