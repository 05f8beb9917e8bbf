#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "csr/errors.hpp"
#include "csr/exponent.hpp"
#include "support.hpp"

namespace csr {
namespace {

AuxiliarySystem constant_aux(const SourceProblem& p) {
  AuxiliarySystem aux;
  for (std::size_t j = 0; j < p.k(); ++j) {
    aux.w_sizes.push_back(1);
    std::vector<Axis> given{{x_axis_name(), p.x_size()}};
    for (std::size_t l = 0; l < j; ++l) given.push_back({w_axis_name(l), 1});
    aux.channels.push_back(ConditionalPmf::from_rows(
        std::move(given), {{w_axis_name(j), 1}}, std::vector<double>(p.x_size(), 1.0)));
    aux.decoders.emplace_back(DeterministicDecoder{std::vector<std::size_t>(p.y_size(j), 0)});
  }
  return aux;
}

FreeJoint induced(const SourceProblem& p, const AuxiliarySystem& aux) {
  return make_free_joint(p, induce_joint(p, aux));
}

SourceProblem constant_distortion(double c) {
  const auto base = load_problem_file(testing::fixture_path("k1_dsbs"));
  return SourceProblem(base.joint(), {2}, {{c, c, c, c}});
}

double direct_omega(const FreeJoint& q, const std::vector<double>& omega, double theta) {
  double s = 0.0;
  for (std::size_t t = 0; t < omega.size(); ++t)
    if (q.joint[t] > 0.0) s += q.joint[t] * std::exp(-theta * omega[t]);
  return -std::log(s);
}

TEST(Omega, VanishesOnTheSourceWithDegenerateAuxiliaries) {
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    const auto q = induced(p, constant_aux(p));
    Weights w;
    w.alpha.assign(p.k(), 0.0);
    w.beta.assign(p.k(), 1.0 / static_cast<double>(p.k()));
    const auto om = omega_values(p, q, 0.0, w);
    for (std::size_t t = 0; t < om.size(); ++t)
      if (q.joint[t] > 0.0) EXPECT_NEAR(om[t], 0.0, 1e-12) << name;
  }
}

TEST(Omega, ConstantDistortionShiftsEveryCell) {
  const auto p = constant_distortion(0.7);
  std::mt19937_64 rng(51);
  const auto q = testing::random_free_joint(p, {2}, rng);
  const Weights w{{0.0}, {1.0}};
  const auto a = omega_values(p, q, 0.0, w);
  const auto b = omega_values(p, q, 1.3, w);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_NEAR(b[t] - a[t], 1.3 * 0.7, 1e-12);
}

TEST(Omega, MatchesExplicitDivision) {
  std::mt19937_64 rng(52);
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    const std::vector<std::size_t> ws = p.k() == 1 ? std::vector<std::size_t>{2}
                                                   : std::vector<std::size_t>{2, 2};
    for (int rep = 0; rep < 3; ++rep) {
      const auto q = testing::random_free_joint(p, ws, rng, rep == 2 ? 0.3 : 0.0);
      const auto w = testing::random_weights(rng, p.k());
      const double mu = 0.4 + rep;
      const auto got = omega_values(p, q, mu, w);
      const auto oracle = testing::omega_oracle(p, q.joint, mu, w);
      for (std::size_t t = 0; t < got.size(); ++t) {
        if (q.joint[t] <= 0.0) {
          EXPECT_TRUE(std::isnan(got[t]));
          continue;
        }
        EXPECT_NEAR(got[t], oracle[t], 1e-10) << name << " cell " << t;
      }
      const auto idx = q.joint.unflatten(5);
      if (q.joint[5] > 0.0) EXPECT_NEAR(omega_cell(p, q, mu, w, idx), oracle[5], 1e-10);
    }
  }
}

TEST(Omega, MassOutsideSourceSupportIsRejected) {
  const auto p = testing::bernoulli_problem(0.3);
  const SourceProblem sparse(JointPmf({{"X", 2}, {"Y1", 2}}, {0.7, 0.0, 0.1, 0.2}), {2},
                             {{0, 1, 1, 0}});
  const TLayout layout(sparse, {1});
  const std::vector<double> u(layout.cells(), 1.0 / static_cast<double>(layout.cells()));
  const auto q = make_free_joint(sparse, JointPmf(layout.axes(), u));
  EXPECT_THROW(omega_values(sparse, q, 1.0, {{0.5}, {0.5}}), NumericalDomainError);
  (void)p;
}

TEST(BigOmega, ZeroTiltConstantAndDirectSum) {
  std::mt19937_64 rng(53);
  const auto p = load_problem_file(testing::fixture_path("k2_side_info"));
  const auto q = testing::random_free_joint(p, {2, 2}, rng);
  const auto w = testing::random_weights(rng, 2);
  EXPECT_EQ(big_omega(p, q, {0.0, 1.0, w}).value, 0.0);

  const auto e = big_omega(p, q, {0.3, 1.5, w});
  EXPECT_NEAR(e.value, direct_omega(q, e.omega, 0.3), 1e-12);
  const auto oracle = testing::omega_oracle(p, q.joint, 1.5, w);
  EXPECT_NEAR(e.value, direct_omega(q, oracle, 0.3), 1e-10);

  const auto c = constant_distortion(0.4);
  const auto qc = induced(c, constant_aux(c));
  EXPECT_NEAR(big_omega(c, qc, {0.6, 2.0, {{0.0}, {1.0}}}).value, 0.6 * 2.0 * 0.4, 1e-12);
}

TEST(BigOmega, SmallTiltSlopeConcavityAndTaylorBound) {
  std::mt19937_64 rng(54);
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    const std::vector<std::size_t> ws(p.k(), 2);
    for (int rep = 0; rep < 3; ++rep) {
      const auto q = testing::random_free_joint(p, ws, rng);
      const auto w = testing::random_weights(rng, p.k());
      const double mu = 0.5 + rep;
      const double mean = expected_omega(p, q, mu, w);
      const double h = 1e-7;
      const double slope = big_omega(p, q, {h, mu, w}).value / h;
      EXPECT_NEAR(slope, mean, 1e-6 * std::max(1.0, std::abs(mean))) << name;
      double prev2 = 0.0, prev1 = big_omega(p, q, {0.05, mu, w}).value;
      for (int i = 2; i <= 40; ++i) {
        const double th = 0.05 * i;
        const double v = big_omega(p, q, {th, mu, w}).value;
        EXPECT_LE(v, th * mean + 1e-9) << name;
        if (i >= 3) EXPECT_LE(v - 2 * prev1 + prev2, 1e-9) << name;
        prev2 = prev1;
        prev1 = v;
      }
    }
  }
}

TEST(MinBigOmega, TrivialCases) {
  const auto p = load_problem_file(testing::fixture_path("k1_dsbs"));
  InnerOptions o;
  o.w_sizes = {2};
  o.multistarts = 2;
  EXPECT_NEAR(min_big_omega(p, {0.0, 1.0, {{0.5}, {0.5}}}, o).value, 0.0, 1e-12);

  // mu = 0: bounded by the source joint with a constant auxiliary
  const ParameterTuple pt{0.4, 0.0, {{0.5}, {0.5}}};
  const auto r = min_big_omega(p, pt, o);
  AuxiliarySystem aux = constant_aux(p);
  const double at_p = big_omega(p, induced(p, aux), pt).value;
  EXPECT_LE(r.value, at_p + 1e-12);
  EXPECT_NEAR(big_omega(p, r.q, pt).value, r.value, 1e-9);
}

TEST(MinBigOmega, AgreesWithGridOracle) {
  const auto p = testing::bernoulli_problem(0.3);
  InnerOptions o;
  o.w_sizes = {2};
  const ParameterTuple pt{0.5, 1.0, {{0.5}, {0.5}}};
  const auto descent = min_big_omega(p, pt, o);
  const auto grid = grid_oracle_min_big_omega(p, pt, o);
  EXPECT_NEAR(descent.value, grid.value, 1e-4);
  o.oracle = true;
  const auto both = min_big_omega(p, pt, o);
  EXPECT_LE(both.value, std::min(descent.value, grid.value) + 1e-12);
}

TEST(Denominators, Formulas) {
  const Weights w{{0.1, 0.3}, {0.2, 0.4}};
  EXPECT_NEAR(f_denominator(2, 0.5, 2.0, w), 1 + 6 * 0.5 + 2 * 0.5 * 2.0 * 0.4, 1e-15);
  EXPECT_NEAR(tilde_denominator(2, 2.0, w), 7 + 2.0 * 0.3 + 2.0 * 7 * 0.3 + 2 * 2.0 * 0.4, 1e-15);
}

TEST(TildeOmega, IndependentAuxiliariesLeaveOnlyDistortion) {
  std::mt19937_64 rng(55);
  const auto p = load_problem_file(testing::fixture_path("k2_side_info"));
  auto aux = testing::random_aux(p, {2, 2}, rng);
  // rows identical across x: W independent of X
  for (std::size_t j = 0; j < 2; ++j) {
    auto& ch = aux.channels[j];
    const std::size_t per_x = ch.given_cells() / p.x_size();
    std::vector<double> rows;
    for (std::size_t x = 0; x < p.x_size(); ++x)
      for (std::size_t r = 0; r < per_x; ++r)
        for (std::size_t w = 0; w < 2; ++w) rows.push_back(ch(r, w));
    ch = ConditionalPmf::from_rows(ch.given(), ch.target(), rows);
  }
  const auto q = induce_joint(p, aux);
  const Weights w{{0.3, 0.2}, {0.1, 0.4}};
  const auto v = tilde_omega_values(p, q, w);
  for (std::size_t t = 0; t < q.size(); ++t) {
    if (q[t] <= 0.0) continue;
    const auto idx = q.unflatten(t);
    const double d = 0.1 * p.distortion(0, idx[0], idx[5]) + 0.4 * p.distortion(1, idx[0], idx[6]);
    EXPECT_NEAR(v[t], d, 1e-12);
  }
}

TEST(TildeOmega, CopyChannelGivesSelfInformation) {
  const auto p = load_problem_file(testing::fixture_path("k1_asymmetric"));
  AuxiliarySystem aux;
  aux.w_sizes = {2};
  aux.channels.push_back(ConditionalPmf::from_rows({{"X", 2}}, {{"W1", 2}}, {1, 0, 0, 1}));
  aux.decoders.emplace_back(DeterministicDecoder{{0, 0, 1, 1}});
  const auto q = induce_joint(p, aux);
  const auto v = tilde_omega_values(p, q, {{1.0}, {0.0}});
  for (std::size_t t = 0; t < q.size(); ++t)
    if (q[t] > 0.0) EXPECT_NEAR(v[t], -std::log(p.px()[q.unflatten(t)[0]]), 1e-12);
}

TEST(TildeOmega, MatchesExplicitDivision) {
  std::mt19937_64 rng(56);
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    for (int rep = 0; rep < 3; ++rep) {
      const auto q = induce_joint(p, testing::random_aux(p, std::vector<std::size_t>(p.k(), 3), rng));
      const auto w = testing::random_weights(rng, p.k());
      const auto got = tilde_omega_values(p, q, w);
      const auto oracle = testing::tilde_oracle(p, q, w);
      for (std::size_t t = 0; t < q.size(); ++t)
        if (q[t] > 0.0) EXPECT_NEAR(got[t], oracle[t], 1e-10) << name;
    }
  }
}

TEST(Tilt, IdentityNormalisationAndOracle) {
  std::mt19937_64 rng(57);
  const auto p = load_problem_file(testing::fixture_path("k2_side_info"));
  const auto q = induce_joint(p, testing::random_aux(p, {2, 2}, rng));
  const Weights w{{0.3, 0.2}, {0.1, 0.4}};
  const auto zero = tilted_distribution(p, q, 0.0, w);
  for (std::size_t t = 0; t < q.size(); ++t) EXPECT_EQ(zero[t], q[t]);

  const auto tilted = tilted_distribution(p, q, 0.7, w);
  const auto om = testing::tilde_oracle(p, q, w);
  double norm = 0.0, s = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t)
    if (q[t] > 0.0) norm += q[t] * std::exp(-0.7 * om[t]);
  for (std::size_t t = 0; t < q.size(); ++t) {
    s += tilted[t];
    if (q[t] > 0.0) EXPECT_NEAR(tilted[t], q[t] * std::exp(-0.7 * om[t]) / norm, 1e-12);
  }
  EXPECT_NEAR(s, 1.0, 1e-12);

  // constant omega-tilde: independent W and constant distortion
  const auto c = constant_distortion(0.3);
  const auto qc = induce_joint(c, constant_aux(c));
  const auto same = tilted_distribution(c, qc, 2.5, {{0.5}, {0.5}});
  for (std::size_t t = 0; t < qc.size(); ++t) EXPECT_NEAR(same[t], qc[t], 1e-15);
}

TEST(Dispersion, TwoPointAndConstantVariance) {
  const auto p = load_problem_file(testing::fixture_path("k1_dsbs"));
  const auto q = induce_joint(p, constant_aux(p));
  // omega-tilde = d(X, 0) = X, uniform on {0, 1}
  EXPECT_NEAR(tilted_variance(p, q, 0.0, {{0.0}, {1.0}}), 0.25, 1e-14);
  const SourceProblem zero(p.joint(), {2}, {{0, 0, 0, 0}});
  EXPECT_NEAR(tilted_variance(zero, q, 0.8, {{0.0}, {1.0}}), 0.0, 1e-15);
}

TEST(Certificate, Formula) {
  EXPECT_NEAR(certificate_value(0.1, 0.5, 1), 0.01 / (2 * 11 * 0.5), 1e-15);
  EXPECT_NEAR(certificate_value(0.9, 0.5, 2), 0.25 / (2 * 13 * 0.5), 1e-15);
  EXPECT_EQ(certificate_value(0.1, 0.0, 1), 0.0);
  EXPECT_THROW(certificate_value(0.0, 0.5, 1), InputError);
  EXPECT_THROW(certificate_value(-0.1, 0.5, 1), InputError);
}

ExponentOptions quick_exponent() {
  ExponentOptions o;
  o.inner.multistarts = 2;
  o.weight_grid = 4;
  o.refinements = 1;
  o.mu_points = 6;
  o.theta_points = 8;
  o.lambda_points = 6;
  o.membership.grid = 4;
  o.membership.refinements = 1;
  o.membership.region.multistarts = 4;
  return o;
}

TEST(Exponent, InsideZeroOutsidePositiveAndOrdered) {
  const auto f = testing::load_fixture("k1_dsbs");
  for (const auto& fp : f.points) {
    const auto r = evaluate_exponents(f.problem, fp.point, quick_exponent());
    EXPECT_GE(r.F, r.tilde_F - 1e-6);
    EXPECT_GE(r.F, 0.0);
    if (fp.expect == "inside") {
      EXPECT_EQ(r.verdict, Verdict::kInside);
      EXPECT_LE(r.F, 1e-3);
      EXPECT_LE(r.tilde_F, 1e-3);
    } else {
      EXPECT_EQ(r.verdict, Verdict::kOutside);
      EXPECT_GT(r.F, 0.0);
      EXPECT_GT(r.rho, 0.0);
      EXPECT_NEAR(r.certificate, certificate_value(-r.margin, r.rho, 1), 1e-15);
      EXPECT_GE(r.tilde_F, r.certificate - 1e-6);
    }
  }
}

TEST(Exponent, NonIncreasingInRate) {
  const auto p = load_problem_file(testing::fixture_path("k1_asymmetric"));
  auto o = quick_exponent();
  double prev = std::numeric_limits<double>::infinity();
  for (double R : {0.0, 0.02, 0.06}) {
    const double F = exponent_F(p, {{R}, {0.05}}, o).F;
    EXPECT_LE(F, prev + 1e-4) << R;
    prev = F;
  }
}

}  // namespace
}  // namespace csr
