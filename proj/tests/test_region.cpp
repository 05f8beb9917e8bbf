#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "csr/errors.hpp"
#include "csr/region.hpp"
#include "support.hpp"

namespace csr {
namespace {

using testing::bernoulli_problem;
using testing::h2;

SourceProblem ternary_output_problem() {
  return SourceProblem(JointPmf({{"X", 2}, {"Y1", 2}}, {0.35, 0.15, 0.2, 0.3}), {3},
                       {{0, 1, 0.4, 1, 0, 0.4}});
}

MembershipOptions quick_membership() {
  MembershipOptions o;
  o.grid = 4;
  o.refinements = 1;
  o.region.multistarts = 4;
  return o;
}

TEST(EnumerateDecoders, Counts) {
  auto count = [](const SourceProblem& p, std::vector<std::size_t> w) {
    std::set<std::vector<std::size_t>> seen;
    std::size_t n = 0;
    enumerate_decoders(p, w, 0, 1000, [&](const DeterministicDecoder& d) {
      seen.insert(d.table);
      ++n;
    });
    EXPECT_EQ(seen.size(), n);
    return n;
  };
  EXPECT_EQ(count(bernoulli_problem(0.3), {1}), 4u);
  const SourceProblem single(JointPmf({{"X", 2}, {"Y1", 2}}, {0.25, 0.25, 0.25, 0.25}), {1},
                             {{0, 0}});
  EXPECT_EQ(count(single, {3}), 1u);
  EXPECT_EQ(count(ternary_output_problem(), {2}), 81u);
  EXPECT_EQ(decoder_count(ternary_output_problem(), {2}, 0), 81u);
  EXPECT_THROW(enumerate_decoders(ternary_output_problem(), {4}, 0, 1000,
                                  [](const DeterministicDecoder&) {}),
               BudgetError);
}

TEST(HyperplaneValue, RateOnlyWeightIsZero) {
  const auto p = bernoulli_problem(0.3);
  const auto v = hyperplane_value(p, {{1.0}, {0.0}});
  EXPECT_NEAR(v.value, 0.0, 1e-9);
}

// min over maps xhat(y) of E d(X, xhat(Y)), by enumerating the maps directly.
double zero_rate_estimate(const SourceProblem& p) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t ny = p.y_size(0), nh = p.xhat_size(0);
  std::size_t maps = 1;
  for (std::size_t y = 0; y < ny; ++y) maps *= nh;
  for (std::size_t m = 0; m < maps; ++m) {
    double e = 0.0;
    std::size_t code = m;
    for (std::size_t y = 0; y < ny; ++y, code /= nh)
      for (std::size_t x = 0; x < p.x_size(); ++x)
        e += p.joint().at({x, y}) * p.distortion(0, x, code % nh);
    best = std::min(best, e);
  }
  return best;
}

TEST(HyperplaneValue, DistortionOnlyWeight) {
  for (const char* name : {"k1_dsbs", "k1_asymmetric"}) {
    const auto p = load_problem_file(testing::fixture_path(name));
    const Weights w{{0.0}, {1.0}};
    // a free auxiliary can copy X, so the value is 0 and below the zero-rate estimate
    const auto free = hyperplane_value(p, w);
    EXPECT_NEAR(free.value, 0.0, 1e-9) << name;
    EXPECT_LE(free.value, zero_rate_estimate(p) + 1e-12);
    RegionOptions one;
    one.w_sizes = {1};
    EXPECT_NEAR(hyperplane_value(p, w, one).value, zero_rate_estimate(p), 1e-9) << name;
  }
}

TEST(HyperplaneValue, ScalarisedClassicalCurve) {
  const auto p = bernoulli_problem(0.3);
  const auto v = hyperplane_value(p, {{0.5}, {0.5}});
  double oracle = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 200000; ++i) {
    const double D = 0.3 * i / 200000.0;
    oracle = std::min(oracle, 0.5 * std::max(h2(0.3) - h2(D), 0.0) + 0.5 * D);
  }
  EXPECT_NEAR(v.value, oracle, 1e-6);
  // the scan optimum sits at D = 1/(1+e); the iteration agrees there
  const double Dstar = 1.0 / (1.0 + std::exp(1.0));
  const double ba = ba_reference(p.px(), p.distortion_matrix(0), 2, Dstar);
  EXPECT_NEAR(v.value, 0.5 * ba + 0.5 * Dstar, 1e-6);
}

TEST(HyperplaneValue, ArgminReproducesValueAndIsNonNegative) {
  std::mt19937_64 rng(41);
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    RegionOptions o;
    o.multistarts = 3;
    for (int rep = 0; rep < 2; ++rep) {
      const auto w = testing::random_weights(rng, p.k());
      const auto v = hyperplane_value(p, w, o);
      EXPECT_GE(v.value, -1e-12) << name;
      EXPECT_NEAR(hyperplane_objective(p, w, v.argmin), v.value, 1e-9) << name;
    }
  }
}

TEST(HyperplaneValue, MidpointConcavity) {
  std::mt19937_64 rng(42);
  for (const char* name : {"k1_dsbs", "k1_asymmetric", "k2_plain"}) {
    const auto p = load_problem_file(testing::fixture_path(name));
    RegionOptions o;
    o.multistarts = 6;
    for (int rep = 0; rep < 3; ++rep) {
      const auto a = testing::random_weights(rng, p.k());
      const auto b = testing::random_weights(rng, p.k());
      Weights mid;
      for (std::size_t j = 0; j < p.k(); ++j) {
        mid.alpha.push_back(0.5 * (a.alpha[j] + b.alpha[j]));
        mid.beta.push_back(0.5 * (a.beta[j] + b.beta[j]));
      }
      const double va = hyperplane_value(p, a, o).value;
      const double vb = hyperplane_value(p, b, o).value;
      EXPECT_GE(hyperplane_value(p, mid, o).value, 0.5 * va + 0.5 * vb - 1e-9) << name;
    }
  }
}

TEST(HyperplaneValue, ClosedFormDecoderMatchesEnumeration) {
  std::mt19937_64 rng(43);
  for (const char* name : {"k1_dsbs", "k1_asymmetric"}) {
    const auto p = load_problem_file(testing::fixture_path(name));
    RegionOptions o;
    o.w_sizes = {2};
    o.multistarts = 4;
    const auto w = testing::random_weights(rng, 1);
    const auto v = hyperplane_value(p, w, o);
    double best = std::numeric_limits<double>::infinity();
    auto aux = v.argmin;
    enumerate_decoders(p, aux.w_sizes, 0, 1 << 12, [&](const DeterministicDecoder& d) {
      aux.decoders[0] = d;
      best = std::min(best, hyperplane_objective(p, w, aux));
    });
    EXPECT_NEAR(best, v.value, 1e-9) << name;
  }
  // k = 2: enumerate user 2's maps with user 1's closed-form decoder fixed
  const auto p = load_problem_file(testing::fixture_path("k2_side_info"));
  RegionOptions o;
  o.w_sizes = {2, 2};
  o.multistarts = 3;
  const Weights w{{0.2, 0.2}, {0.3, 0.3}};
  const auto v = hyperplane_value(p, w, o);
  auto aux = v.argmin;
  double best = std::numeric_limits<double>::infinity();
  enumerate_decoders(p, aux.w_sizes, 1, 1 << 12, [&](const DeterministicDecoder& d) {
    aux.decoders[1] = d;
    best = std::min(best, hyperplane_objective(p, w, aux));
  });
  EXPECT_NEAR(best, v.value, 1e-9);
}

TEST(WeightGrid, SizesAndSums) {
  EXPECT_EQ(weight_grid(1, 8).size(), 9u);
  EXPECT_EQ(weight_grid(2, 4).size(), 35u);
  for (const auto& w : weight_grid(2, 4)) {
    double s = 0.0;
    for (std::size_t j = 0; j < 2; ++j) s += w.alpha[j] + w.beta[j];
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(Membership, TrivialPoints) {
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    RateDistortionPoint rich, poor;
    for (std::size_t j = 0; j < p.k(); ++j) {
      rich.rates.push_back(std::log(2.0) * static_cast<double>(j + 1));
      rich.distortions.push_back(p.max_distortion(j));
      poor.rates.push_back(0.0);
      poor.distortions.push_back(0.0);
    }
    EXPECT_EQ(membership(p, rich, quick_membership()).verdict, Verdict::kInside) << name;
    const auto r = membership(p, poor, quick_membership());
    EXPECT_EQ(r.verdict, Verdict::kOutside) << name;
    EXPECT_LT(r.margin, -1e-3);
  }
}

TEST(Membership, ClassicalBoundaryPoints) {
  const auto p = bernoulli_problem(0.3);
  const double r = h2(0.3) - h2(0.1);
  const auto out = membership(p, {{r - 0.05}, {0.1}}, quick_membership());
  EXPECT_EQ(out.verdict, Verdict::kOutside);
  EXPECT_LT(out.margin, 0.0);
  EXPECT_EQ(membership(p, {{r + 0.05}, {0.1}}, quick_membership()).verdict, Verdict::kInside);
}

TEST(Membership, EnlargingNeverLeavesTheRegion) {
  const auto f = testing::load_fixture("k2_side_info");
  const auto o = quick_membership();
  HyperplaneCache cache(f.problem, o.region);
  for (const auto& fp : f.points) {
    if (fp.expect != "inside") continue;
    ASSERT_EQ(membership(f.problem, fp.point, o, &cache).verdict, Verdict::kInside);
    for (std::size_t c = 0; c < 4; ++c) {
      auto bigger = fp.point;
      if (c < 2)
        for (std::size_t j = c; j < 2; ++j) bigger.rates[j] += 0.1;
      else
        bigger.distortions[c - 2] += 0.05;
      EXPECT_EQ(membership(f.problem, bigger, o, &cache).verdict, Verdict::kInside);
    }
  }
}

TEST(BlahutArimoto, ReferenceValues) {
  const auto p3 = bernoulli_problem(0.3);
  EXPECT_NEAR(ba_reference(p3.px(), p3.distortion_matrix(0), 2, 0.3), 0.0, 1e-9);
  const auto p5 = bernoulli_problem(0.5);
  EXPECT_NEAR(ba_reference(p5.px(), p5.distortion_matrix(0), 2, 0.0), std::log(2.0), 1e-6);
  const double r = ba_reference(p3.px(), p3.distortion_matrix(0), 2, 0.1);
  EXPECT_NEAR(r, 0.28578, 5e-5);
  EXPECT_NEAR(r, h2(0.3) - h2(0.1), 1e-6);
}

TEST(BoundaryRate, MatchesClassicalCurve) {
  const auto p = bernoulli_problem(0.3);
  auto o = quick_membership();
  o.grid = 8;
  HyperplaneCache cache(p, o.region);
  for (double D : {0.05, 0.15}) {
    const double ba = ba_reference(p.px(), p.distortion_matrix(0), 2, D);
    EXPECT_NEAR(boundary_rate(p, D, o, cache), ba, 5e-3) << D;
  }
}

}  // namespace
}  // namespace csr
