#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "seqmatch/engine.hpp"
#include "seqmatch/error.hpp"
#include "seqmatch/rng.hpp"

using namespace seqmatch;

namespace {

EngineConfig config(Eigen::Index p, std::int64_t n, double lambda) {
  EngineConfig c;
  c.p = p;
  c.n_target = n;
  c.lambda = lambda;
  return c;
}

std::vector<Eigen::VectorXd> normal_stream(std::uint64_t seed, std::int64_t n, Eigen::Index p) {
  CounterRng rng(seed);
  std::vector<Eigen::VectorXd> out;
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(p);
    for (Eigen::Index j = 0; j < p; ++j) x[j] = rng.normal();
    out.push_back(x);
  }
  return out;
}

}  // namespace

TEST(MatchThreshold, PaperStyleExample) {
  const double expected = 2.0 * 9.0 / 8.0 * oracle::f_quantile(0.10, 2, 8);
  EXPECT_NEAR(match_threshold(2, 10, 0.10), expected, 1e-9);
  EXPECT_NEAR(match_threshold(2, 10, 0.10), 0.2405, 5e-4);
  EXPECT_THROW(match_threshold(2, 2, 0.1), DomainError);
}

TEST(MatchThreshold, NondecreasingInLambda) {
  for (std::int64_t t : {3, 10, 100}) {
    double prev = 0.0;
    for (double lambda = 0.01; lambda < 1.0; lambda += 0.01) {
      const double c = match_threshold(2, t, lambda);
      EXPECT_GE(c, prev);
      prev = c;
    }
  }
}

TEST(Mahalanobis, Examples) {
  const Eigen::Vector2d a(1, 0), b(0, 0);
  EXPECT_DOUBLE_EQ(mahalanobis_stat(a, a, Eigen::Matrix2d::Identity()), 0.0);
  EXPECT_DOUBLE_EQ(mahalanobis_stat(a, b, Eigen::Matrix2d::Identity()), 0.5);
  const Eigen::Matrix2d s_inv = Eigen::Vector2d(0.75, 0.75).asDiagonal();  // inverse of diag(4/3, 4/3)
  EXPECT_NEAR(mahalanobis_stat(Eigen::Vector2d(2, 0), Eigen::Vector2d(0, 0), s_inv), 1.5, 1e-15);
  EXPECT_DOUBLE_EQ(mahalanobis_stat(a, b, s_inv), mahalanobis_stat(b, a, s_inv));
  EXPECT_THROW(mahalanobis_stat(a, Eigen::Vector3d(0, 0, 0), s_inv), DimensionMismatch);
}

TEST(SearchReservoir, TiesGoToEarliestCandidate) {
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 5.0);
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 0.0);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 10.0);
  const Eigen::MatrixXd s_inv = Eigen::MatrixXd::Constant(1, 1, 1.0 / 25.0);
  auto r = search_reservoir(x, {&a, &b}, s_inv, 1.0);
  ASSERT_TRUE(r.best);
  EXPECT_EQ(*r.best, 0u);
  EXPECT_TRUE(r.accepted);
  r = search_reservoir(x, {&b, &a}, s_inv, 0.1);
  EXPECT_EQ(*r.best, 0u);
  EXPECT_FALSE(r.accepted);
}

TEST(TrialState, FirstArrivalIsRandomizedIntoReservoir) {
  TrialState s(config(2, 10, 0.1), 7);
  const auto d = s.allocate(Eigen::Vector2d(0.3, -1.0));
  EXPECT_FALSE(d.matched);
  EXPECT_EQ(s.reservoir().size(), 1u);
  EXPECT_EQ(d.subject_id, 1);
  EXPECT_FALSE(d.min_stat.has_value());
}

TEST(TrialState, DuplicateOfReservoirPointMatchesWithOppositeArm) {
  for (double lambda : {0.001, 0.1, 0.9}) {
    TrialState s(config(2, 50, lambda), 3);
    // Any unmatched arrival leaves the reservoir non-empty.
    for (const auto& x : normal_stream(5, 40, 2)) {
      s.allocate(x);
      if (s.t() >= 6 && !s.reservoir().empty()) break;
    }
    ASSERT_FALSE(s.reservoir().empty());
    const std::int64_t target = s.reservoir().back();
    const Subject& original = s.subject(target);
    const auto d = s.allocate(original.covariates);
    EXPECT_TRUE(d.matched) << lambda;
    EXPECT_EQ(d.partner, target);
    EXPECT_EQ(d.arm, opposite(*s.subject(target).arm));
    EXPECT_DOUBLE_EQ(*d.min_stat, 0.0);
  }
}

TEST(TrialState, ConstantCovariatesPairUp) {
  TrialState s(config(1, 4, 0.1), 11);
  for (int i = 0; i < 4; ++i) s.allocate(Eigen::VectorXd::Constant(1, 2.0));
  const TrialSplit split = s.finalize();
  EXPECT_GE(split.pairs.size(), 1u);
  EXPECT_EQ(2 * split.pairs.size() + split.reservoir.size(), 4u);
  // t=1 randomized, t=2 matches it, t=3 finds an empty reservoir, t=4 matches.
  EXPECT_EQ(split.pairs.size(), 2u);
}

TEST(TrialState, SingleSubjectTrial) {
  TrialState s(config(3, 1, 0.1), 1);
  s.allocate(Eigen::Vector3d(1, 2, 3));
  const TrialSplit split = s.finalize();
  EXPECT_TRUE(split.pairs.empty());
  EXPECT_EQ(split.reservoir.size(), 1u);
}

TEST(TrialState, Errors) {
  TrialState s(config(2, 2, 0.1), 1);
  EXPECT_THROW(s.finalize(), StateError);
  EXPECT_THROW(s.allocate(Eigen::Vector3d(1, 2, 3)), DimensionMismatch);
  s.allocate(Eigen::Vector2d(0, 0));
  s.allocate(Eigen::Vector2d(1, 0));
  EXPECT_THROW(s.allocate(Eigen::Vector2d(1, 0)), StateError);
  EXPECT_THROW(TrialState(config(2, 10, 0.0), 1), std::invalid_argument);
  EXPECT_THROW(TrialState(config(2, 10, 1.0), 1), std::invalid_argument);
  EXPECT_THROW(TrialState(config(0, 10, 0.5), 1), std::invalid_argument);
}

TEST(TrialState, StructuralInvariantsOnRandomStreams) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(seed % 3);
    const auto stream = normal_stream(100 + seed, 150, p);
    TrialState s(config(p, 150, 0.05 + 0.03 * static_cast<double>(seed % 10)), seed);
    std::set<std::int64_t> reservoir;
    std::set<std::int64_t> matched;
    for (const auto& x : stream) {
      const CounterRng before = s.rng();
      const auto d = s.allocate(x);
      if (d.matched) {
        ASSERT_TRUE(reservoir.count(*d.partner)) << "partner must come from the reservoir";
        reservoir.erase(*d.partner);
        ASSERT_TRUE(matched.insert(d.subject_id).second);
        ASSERT_TRUE(matched.insert(*d.partner).second);
        EXPECT_EQ(s.rng(), before) << "matching consumes no randomness";
        EXPECT_LE(*d.min_stat, *d.threshold);
      } else {
        reservoir.insert(d.subject_id);
        EXPECT_NE(s.rng(), before);
      }
      ASSERT_EQ(2 * static_cast<std::int64_t>(s.matches().size()) + static_cast<std::int64_t>(s.reservoir().size()), s.t());
      ASSERT_EQ(std::set<std::int64_t>(s.reservoir().begin(), s.reservoir().end()), reservoir);
    }
    for (const auto& [t, c] : s.finalize().pairs) {
      EXPECT_EQ(*t.arm, Arm::treatment);
      EXPECT_EQ(*c.arm, Arm::control);
    }
  }
}

TEST(TrialState, Deterministic) {
  const auto stream = normal_stream(1, 80, 2);
  TrialState a(config(2, 80, 0.1), 99), b(config(2, 80, 0.1), 99);
  for (const auto& x : stream) {
    const auto da = a.allocate(x);
    const auto db = b.allocate(x);
    ASSERT_EQ(da.arm, db.arm);
    ASSERT_EQ(da.partner, db.partner);
  }
}

TEST(TrialState, LargerLambdaMatchesMoreOnAverage) {
  // Pathwise the reservoirs diverge after the first differing decision, so
  // the comparison is made over many streams.
  const double lambdas[] = {0.02, 0.1, 0.3, 0.6};
  double prev = -1.0;
  for (double lambda : lambdas) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      TrialState s(config(2, 100, lambda), seed);
      for (const auto& x : normal_stream(seed, 100, 2)) s.allocate(x);
      total += static_cast<double>(s.matches().size());
    }
    EXPECT_GT(total, prev) << lambda;
    prev = total;
  }
}

TEST(TrialState, BinaryCovariatesUsePseudoinverse) {
  TrialState s(config(2, 40, 0.1), 5);
  CounterRng rng(8);
  for (int i = 0; i < 40; ++i) {
    // Second covariate constant: covariance is singular throughout.
    s.allocate(Eigen::Vector2d(rng.bernoulli(0.5) ? 1.0 : 0.0, 1.0));
  }
  EXPECT_EQ(2 * s.matches().size() + s.reservoir().size(), 40u);
  EXPECT_GT(s.matches().size(), 10u);
}
