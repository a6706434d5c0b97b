#include "pastel/common/error.hpp"
#include "pastel/stl/linearize.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include "../support/generators.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pastel;
using namespace pastel::stl;

namespace {

const env::EnvironmentSpec kWorld = env::EnvironmentSpec::default_world();

// Brute-force until: enumerate every release time and check the guard pointwise.
bool until_by_enumeration(const std::vector<double>& px, double lhs_threshold,
                          double rhs_threshold, int lo, int hi) {
  for (int u = lo; u <= hi; ++u) {
    if (!(px[static_cast<std::size_t>(u)] > rhs_threshold)) continue;
    bool guard = true;
    for (int v = 0; v <= u; ++v) guard = guard && px[static_cast<std::size_t>(v)] > lhs_threshold;
    if (guard) return true;
  }
  return false;
}

double soft_min(const std::vector<double>& xs, double beta) {
  double total = 0.0;
  for (double x : xs) total += std::exp(-beta * x);
  return -std::log(total) / beta;
}

} // namespace

TEST(StlSatisfies, GloballyAllPositive) {
  EXPECT_TRUE(satisfies(parse("G[0,2](px>0)"), testkit::px_signal({1, 2, 3}), 0, kWorld));
}

TEST(StlSatisfies, EventuallyNoneAboveThreshold) {
  EXPECT_FALSE(satisfies(parse("F[0,2](px>4)"), testkit::px_signal({1, 2, 3}), 0, kWorld));
}

TEST(StlSatisfies, UntilMatchesEnumeration) {
  const std::vector<double> px{1, 2, 5};
  const bool expected = until_by_enumeration(px, 0.0, 4.0, 0, 2);
  ASSERT_TRUE(expected);
  EXPECT_EQ(satisfies(parse("(px>0) U[0,2] (px>4)"), testkit::px_signal(px), 0, kWorld), expected);

  // guard broken before release
  const std::vector<double> broken{1, -1, 5};
  EXPECT_FALSE(until_by_enumeration(broken, 0.0, 4.0, 0, 2));
  EXPECT_FALSE(satisfies(parse("(px>0) U[0,2] (px>4)"), testkit::px_signal(broken), 0, kWorld));
}

TEST(StlSatisfies, StrictPredicateBoundary) {
  EXPECT_FALSE(satisfies(parse("px>2"), testkit::px_signal({2}), 0, kWorld));
  EXPECT_EQ(robustness(parse("px>2"), testkit::px_signal({2}), 0, kWorld), 0.0);
}

TEST(StlSatisfies, SignalTooShortNamesLengths) {
  try {
    satisfies(parse("F[0,5](px>0)"), testkit::px_signal({1, 2, 3}), 0, kWorld);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::domain);
    EXPECT_NE(std::string(e.what()).find("needs 6"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("has 3"), std::string::npos) << e.what();
  }
}

TEST(StlSatisfies, UnknownRegion) {
  EXPECT_THROW(satisfies(parse("Z9"), testkit::px_signal({1}), 0, kWorld), Error);
}

TEST(StlRobustness, Examples) {
  EXPECT_DOUBLE_EQ(robustness(parse("px>2"), testkit::px_signal({5}), 0, kWorld), 3.0);
  EXPECT_DOUBLE_EQ(robustness(parse("G[0,2](px>0)"), testkit::px_signal({1, 2, 3}), 0, kWorld), 1.0);
  EXPECT_DOUBLE_EQ(robustness(parse("F[0,2](px>4)"), testkit::px_signal({1, 2, 3}), 0, kWorld), -1.0);
}

TEST(StlRobustness, RegionAtoms) {
  std::vector<double> v{5.0, 5.0, 0.0, 0.0};
  const Signal s(4, v);
  EXPECT_DOUBLE_EQ(robustness(parse("O1"), s, 0, kWorld), 1.0);
  EXPECT_DOUBLE_EQ(robustness(parse("!O1"), s, 0, kWorld), -1.0);
  EXPECT_DOUBLE_EQ(robustness(parse("!(O1)"), s, 0, kWorld), -1.0);
}

TEST(StlRobustness, SignConsistencyAndDuality) {
  Rng rng(99);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t len = 1 + rng() % 40;
    const Formula f = testkit::random_formula(rng, 4, static_cast<int>(len) - 1);
    const Signal s = testkit::random_signal(rng, len);
    const double r = robustness(f, s, 0, kWorld);
    if (std::abs(r) > 1e-9) {
      EXPECT_EQ(r > 0, satisfies(f, s, 0, kWorld));
      ++checked;
    }
    EXPECT_EQ(robustness(Formula::negation(f), s, 0, kWorld), -r);
  }
  EXPECT_GT(checked, 900);
}

TEST(StlRobustness, EventuallyIsDualOfGlobally) {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    const Formula g = testkit::random_formula(rng, 3, 10);
    const Interval w{static_cast<int>(rng() % 4), 4 + static_cast<int>(rng() % 5)};
    const Signal s = testkit::random_signal(rng, 25);
    const Formula lhs = Formula::eventually(w, g);
    const Formula rhs = Formula::negation(Formula::always(w, Formula::negation(g)));
    EXPECT_EQ(satisfies(lhs, s, 0, kWorld), satisfies(rhs, s, 0, kWorld));
    EXPECT_EQ(robustness(lhs, s, 0, kWorld), robustness(rhs, s, 0, kWorld));
  }
}

TEST(StlSmooth, WidthOneIsExact) {
  const Signal s = testkit::px_signal({1, 2, 3, 4});
  for (const char* text : {"px>2", "F[1,1](G[2,2](px>0))", "!(F[0,0](px>1))"}) {
    const Formula f = parse(text);
    EXPECT_EQ(max_aggregation_width(f), 1u);
    EXPECT_DOUBLE_EQ(smooth_robustness(f, s, 0, kWorld, 3.0), robustness(f, s, 0, kWorld));
  }
}

TEST(StlSmooth, GloballyNumericOracle) {
  const double beta = 10.0;
  const double expected = soft_min({1, 2, 3}, beta);
  const double got = smooth_robustness(parse("G[0,2](px>0)"), testkit::px_signal({1, 2, 3}), 0,
                                       kWorld, beta);
  EXPECT_NEAR(got, expected, 1e-12);
  EXPECT_LE(std::abs(got - 1.0), std::log(3.0) / beta);
}

TEST(StlSmooth, LargeBetaApproachesExact) {
  const double got =
      smooth_robustness(parse("F[0,2](px>4)"), testkit::px_signal({1, 2, 3}), 0, kWorld, 1000.0);
  EXPECT_NEAR(got, -1.0, 1e-3);
}

TEST(StlSmooth, RejectsNonPositiveBeta) {
  EXPECT_THROW(smooth_robustness(parse("px>0"), testkit::px_signal({1}), 0, kWorld, 0.0), Error);
  EXPECT_THROW(smooth_robustness(parse("px>0"), testkit::px_signal({1}), 0, kWorld, -1.0), Error);
}

TEST(StlSmooth, OverflowGuarded) {
  const Signal s = testkit::px_signal({1e6, -1e6, 3e5});
  const double v = smooth_robustness(parse("F[0,2](px>0)"), s, 0, kWorld, 1e3);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1e6, 1e-6);
}

TEST(StlSmooth, FlattenedWidths) {
  EXPECT_EQ(max_aggregation_width(parse("G[0,2](px>0)")), 3u);
  // nested conjunctions and G over a conjunction collapse into one soft-min
  EXPECT_EQ(max_aggregation_width(parse("G[0,2](px>0 & py>0) & vx>0")), 7u);
  // F of G alternates, so widths stay separate
  EXPECT_EQ(max_aggregation_width(parse("F[0,15](G[0,10](R1))")), 16u);
  // negation of the dual joins the chain: G !F x == -(F F x)
  EXPECT_EQ(max_aggregation_width(parse("G[0,1](!(F[0,2](px>0)))")), 6u);
}

TEST(StlSmooth, BoundsOnRandomizedSuite) {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const std::size_t len = 1 + rng() % 40;
    const Formula f = testkit::random_formula(rng, 4, static_cast<int>(len) - 1);
    const Signal s = testkit::random_signal(rng, len);
    const double exact = robustness(f, s, 0, kWorld);
    for (double beta : {2.0, 10.0, 50.0}) {
      const double smooth = smooth_robustness(f, s, 0, kWorld, beta);
      EXPECT_LE(std::abs(smooth - exact), smooth_error_bound(f, beta) + 1e-12);
    }
  }
}

TEST(StlSmooth, GradientMatchesFiniteDifferences) {
  // affine atoms only: the smoothed value is differentiable everywhere
  Rng rng(3);
  for (int i = 0; i < 60; ++i) {
    const std::size_t len = 12;
    const Formula f = testkit::random_formula(rng, 4, static_cast<int>(len) - 1, false);
    const Signal s = testkit::random_signal(rng, len);
    const SmoothProgram program(f, 0, len, 4, &kWorld);
    std::vector<double> grad(s.values().size());
    program.evaluate(s, 5.0, grad);
    const double h = 1e-6;
    for (std::size_t k = 0; k < grad.size(); ++k) {
      std::vector<double> up(s.values().begin(), s.values().end());
      std::vector<double> dn = up;
      up[k] += h;
      dn[k] -= h;
      const double numeric =
          (program.evaluate(Signal(4, up), 5.0) - program.evaluate(Signal(4, dn), 5.0)) / (2 * h);
      EXPECT_NEAR(grad[k], numeric, 1e-6) << render_canonical(f) << " component " << k;
    }
  }
}

TEST(StlSmooth, RegionGradientFollowsNearestFace) {
  // (6.5, 7.2) in R1=[6,8]^2: nearest face is x=6, so d rho / d px = +1
  const Signal s(4, {6.5, 7.2, 0.0, 0.0});
  const SmoothProgram program(parse("R1"), 0, 1, 4, &kWorld);
  std::vector<double> grad(4);
  EXPECT_DOUBLE_EQ(program.evaluate(s, 1.0, grad), 0.5);
  EXPECT_EQ(grad, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
  const SmoothProgram outside(parse("!R1"), 0, 1, 4, &kWorld);
  outside.evaluate(s, 1.0, grad);
  EXPECT_EQ(grad, (std::vector<double>{-1.0, 0.0, 0.0, 0.0}));
}
