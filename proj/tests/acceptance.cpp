// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion; exit status
// is non-zero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "csr/errors.hpp"
#include "csr/exponent.hpp"
#include "csr/region.hpp"
#include "csr/simulator.hpp"
#include "support.hpp"

namespace {

using namespace csr;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void fail(const std::string& why) {
    if (pass) detail << " first failure: " << why << ";";
    pass = false;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, Outcome& o, double secs) {
  std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " ("
            << static_cast<long>(std::lround(secs)) << " s)" << o.detail.str() << std::endl;
}

ExponentOptions sweep_options() {
  ExponentOptions o;
  o.inner.multistarts = 2;
  o.inner.seed = 7;
  o.weight_grid = 4;
  o.refinements = 2;
  o.mu_points = 6;
  o.theta_points = 8;
  o.lambda_points = 6;
  o.membership.grid = 8;
  o.membership.refinements = 2;
  o.membership.region.multistarts = 8;
  o.membership.region.seed = 7;
  return o;
}

struct PointResult {
  std::string fixture;
  testing::FixturePoint point;
  ExponentResult exponent;
};

// --- 1 ---------------------------------------------------------------------

Outcome classical_boundary() {
  Outcome o;
  const auto p = testing::bernoulli_problem(0.3);
  MembershipOptions m;
  m.grid = 8;
  m.refinements = 2;
  m.region.multistarts = 8;
  HyperplaneCache cache(p, m.region);
  double worst = 0.0;
  for (double D : {0.02, 0.05, 0.1, 0.15, 0.2}) {
    const double closed = testing::h2(0.3) - testing::h2(D);
    const double ba = ba_reference(p.px(), p.distortion_matrix(0), 2, D);
    const double found = boundary_rate(p, D, m, cache);
    worst = std::max({worst, std::abs(found - ba), std::abs(found - closed)});
    if (std::abs(found - ba) > 5e-3 || std::abs(found - closed) > 5e-3)
      o.fail("D=" + std::to_string(D));
  }
  o.detail << " max |boundary - R(D)| = " << worst << " nats";
  return o;
}

// --- 2, 3 ------------------------------------------------------------------

std::vector<PointResult> sweep_fixtures() {
  std::vector<PointResult> out;
  for (const auto& name : testing::fixture_names()) {
    const auto f = testing::load_fixture(name);
    for (const auto& fp : f.points)
      out.push_back({name, fp, evaluate_exponents(f.problem, fp.point, sweep_options())});
  }
  return out;
}

Outcome dichotomy(const std::vector<PointResult>& results) {
  Outcome o;
  std::size_t inside = 0, outside = 0;
  for (const auto& r : results) {
    const auto& e = r.exponent;
    std::ostringstream tag;
    tag << r.fixture << "/" << r.point.expect << " margin " << e.margin << " F " << e.F;
    if (std::string(to_string(e.verdict)) != r.point.expect) o.fail("verdict " + tag.str());
    if (e.margin > 1e-2) {
      ++inside;
      if (e.F > 1e-3) o.fail(tag.str());
    } else if (e.margin < -1e-2) {
      ++outside;
      if (e.F < 1e-4) o.fail(tag.str());
    }
  }
  double min_out = 1e300, max_in = 0.0;
  for (const auto& r : results) {
    if (r.exponent.margin < 0)
      min_out = std::min(min_out, r.exponent.F);
    else
      max_in = std::max(max_in, r.exponent.F);
  }
  o.detail << " " << inside << " inside points max F " << max_in << ", " << outside
           << " outside points min F " << min_out;
  return o;
}

Outcome ordering(const std::vector<PointResult>& results) {
  Outcome o;
  double worst_gap = 1e300, worst_cert = 1e300;
  for (const auto& r : results) {
    const auto& e = r.exponent;
    const std::size_t k = e.point.rates.size();
    worst_gap = std::min(worst_gap, e.F - e.tilde_F);
    if (e.F < e.tilde_F - 1e-6) o.fail(r.fixture + " F < F~");
    if (e.verdict == Verdict::kOutside) {
      const double cert = certificate_value(-e.margin, e.rho, k);
      worst_cert = std::min(worst_cert, e.tilde_F - cert);
      if (e.tilde_F < cert - 1e-6) o.fail(r.fixture + " F~ below certificate");
      if (std::abs(cert - e.certificate) > 1e-15) o.fail(r.fixture + " certificate mismatch");
    }
  }
  o.detail << " min(F - F~) = " << worst_gap << ", min(F~ - certificate) = " << worst_cert;
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome cumulant_invariants() {
  Outcome o;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> logmu(std::log(0.05), std::log(5.0));
  double worst_slope = 0.0, worst_curv = -1e300, worst_taylor = -1e300;
  std::size_t draws = 0;
  for (const auto& name : testing::fixture_names()) {
    const auto p = load_problem_file(testing::fixture_path(name));
    for (int rep = 0; rep < 100; ++rep, ++draws) {
      const std::vector<std::size_t> ws(p.k(), 2 + rep % 2);
      const auto q = testing::random_free_joint(p, ws, rng, rep % 3 == 0 ? 0.25 : 0.0);
      const auto w = testing::random_weights(rng, p.k());
      const double mu = std::exp(logmu(rng));
      if (big_omega(p, q, {0.0, mu, w}).value != 0.0) o.fail(name + " omega(0) != 0");
      const double mean = expected_omega(p, q, mu, w);
      // second-order one-sided difference: O(h^2) truncation
      const double h = 1e-4;
      const double o1 = big_omega(p, q, {h, mu, w}).value;
      const double o2 = big_omega(p, q, {2 * h, mu, w}).value;
      const double slope = 2 * o1 / h - o2 / (2 * h);
      const double rel = std::abs(slope - mean) / std::max(std::abs(mean), 1e-300);
      if (std::abs(slope - mean) > 1e-6 * std::abs(mean) + 1e-12) o.fail(name + " slope");
      worst_slope = std::max(worst_slope, rel);

      std::vector<double> v;
      for (int i = 0; i <= 30; ++i) {
        const double th = 0.1 * i;
        v.push_back(big_omega(p, q, {th, mu, w}).value);
        worst_taylor = std::max(worst_taylor, v.back() - th * mean);
        if (v.back() > th * mean + 1e-9) o.fail(name + " Taylor");
      }
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        const double c = v[i + 1] - 2 * v[i] + v[i - 1];
        worst_curv = std::max(worst_curv, c);
        if (c > 1e-9) o.fail(name + " concavity");
      }
    }
  }
  o.detail << " " << draws << " draws; max relative slope error " << worst_slope
           << ", max second difference " << worst_curv << ", max Omega - theta E[omega] "
           << worst_taylor;
  return o;
}

// --- 5 ---------------------------------------------------------------------

std::vector<std::size_t> message_sizes(const RateDistortionPoint& pt, std::size_t n) {
  std::vector<std::size_t> M;
  for (std::size_t j = 0; j < pt.rates.size(); ++j)
    M.push_back(std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(std::exp(n * pt.encoder_rate(j)) + 1e-9))));
  return M;
}

Code with_dp(const SourceProblem& p, Code code, const std::vector<double>& D,
             std::size_t& fallbacks) {
  for (std::size_t j = 0; j < p.k(); ++j) {
    try {
      code.decoders[j] = dp_decoder(p, code, j, D[j]);
    } catch (const BudgetError&) {
      ++fallbacks;
    }
  }
  return code;
}

AuxiliarySystem witness_aux(const SourceProblem& p, const RateDistortionPoint& pt) {
  const auto m = sweep_options().membership;
  HyperplaneCache cache(p, m.region);
  const auto r = membership(p, pt, m, &cache);
  return cache.get(r.witness).argmin;
}

Outcome converse_bound(const std::vector<PointResult>& results) {
  Outcome o;
  std::size_t rows = 0, fallbacks = 0;
  double min_slack = 1e300, max_pc = 0.0;
  for (const auto& r : results) {
    if (r.exponent.verdict != Verdict::kOutside) continue;
    const auto t0 = Clock::now();
    const auto p = load_problem_file(testing::fixture_path(r.fixture));
    const auto& pt = r.point.point;
    const auto aux = witness_aux(p, pt);
    for (std::size_t n = 2; n <= 8; ++n) {
      const auto code =
          with_dp(p, random_code(p, aux, n, message_sizes(pt, n), derive_seed(55, n)),
                  pt.distortions, fallbacks);
      auto rep = exact_pc(p, code, pt.distortions);
      verify_bound(code, pt, r.exponent.F, rep);
      ++rows;
      min_slack = std::min(min_slack, rep.bound - rep.pc);
      max_pc = std::max(max_pc, rep.pc);
      if (!rep.bound_satisfied) o.fail(r.fixture + " n=" + std::to_string(n));
    }
    const double secs = seconds_since(t0);
    if (secs > 300) o.fail(r.fixture + " took " + std::to_string(secs) + " s");
  }
  o.detail << " " << rows << " (fixture, n) rows; max P_c " << max_pc << ", min bound - P_c "
           << min_slack << ", DP fallbacks " << fallbacks;
  return o;
}

// --- 6 ---------------------------------------------------------------------

Outcome simulator_consistency() {
  Outcome o;
  std::size_t checks = 0, misses = 0, perturbations = 0, criteria = 0, fallbacks = 0;
  std::mt19937_64 rng(606);
  for (const auto& name : testing::fixture_names()) {
    const auto f = testing::load_fixture(name);
    const auto& p = f.problem;
    for (const auto& fp : f.points) {
      const auto aux = witness_aux(p, fp.point);
      for (std::size_t n = 1; n <= 4; ++n) {
        const auto sym = random_code(p, aux, n, message_sizes(fp.point, n), derive_seed(66, n));
        const auto dp = with_dp(p, sym, fp.point.distortions, fallbacks);
        for (const Code* code : {&sym, &dp}) {
          const auto exact = exact_pc(p, *code, fp.point.distortions);
          MonteCarloOptions mc;
          mc.samples = 1000000;
          mc.seed = derive_seed(67, checks);
          const auto est = mc_pc(p, *code, fp.point.distortions, mc);
          ++checks;
          if (exact.pc < est.ci_low || exact.pc > est.ci_high) {
            ++misses;
            std::ostringstream why;
            why << name << " n=" << n << " exact " << exact.pc << " CI [" << est.ci_low << ", "
                << est.ci_high << "]";
            o.fail(why.str());
          }
          for (bool ok : distortion_criteria_check(p, exact, fp.point.distortions)) {
            ++criteria;
            if (!ok) o.fail(name + " distortion criteria");
          }
        }
        // causality: changing y after time i leaves outputs up to i unchanged
        for (int rep = 0; rep < 25; ++rep, ++perturbations) {
          const Code& code = rep % 2 ? dp : sym;
          const std::size_t j = rep % p.k();
          std::uniform_int_distribution<std::uint32_t> ysym(0, p.y_size(j) - 1);
          std::uniform_int_distribution<std::size_t> msg(0, code.prefix_messages(j) - 1);
          std::vector<std::uint32_t> y(n);
          for (auto& v : y) v = ysym(rng);
          const std::size_t i = rep % n, s = msg(rng);
          auto z = y;
          for (std::size_t t = i + 1; t < n; ++t) z[t] = ysym(rng);
          const auto a = code.decode_sequence(j, s, y), b = code.decode_sequence(j, s, z);
          for (std::size_t t = 0; t <= i; ++t)
            if (a[t] != b[t]) o.fail(name + " causality");
        }
      }
    }
  }
  o.detail << " " << checks << " exact-vs-MC checks at 1e6 samples (" << misses
           << " outside their 95% interval), " << perturbations
           << " causality perturbations, " << criteria << " distortion-criteria checks";
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome oracle_equivalence() {
  Outcome o;
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  const auto& names = testing::fixture_names();
  for (int s = 0; s < 20; ++s) {
    const auto p = load_problem_file(testing::fixture_path(names[s % names.size()]));
    InnerOptions opt;
    opt.w_sizes.assign(p.k(), 2);
    opt.multistarts = 256;
    opt.seed = derive_seed(708, s);
    const TLayout layout(p, opt.w_sizes);
    if (layout.cells() > 4096) o.fail("|T| too large");
    const auto w = testing::random_weights(rng, p.k());
    const double mu = std::exp(std::log(0.1) + u(rng) * std::log(30.0));
    const double theta = (0.05 + 0.95 * u(rng)) / (1.0 + mu * w.alpha_max());
    const ParameterTuple pt{theta, mu, w};
    const double descent = min_big_omega(p, pt, opt).value;
    const double grid = grid_oracle_min_big_omega(p, pt, opt).value;
    worst = std::max(worst, std::abs(descent - grid));
    if (std::abs(descent - grid) > 1e-4) {
      std::ostringstream why;
      why << names[s % names.size()] << " setting " << s << ": descent " << descent << " oracle "
          << grid;
      o.fail(why.str());
    }
  }
  o.detail << " 20 settings, max |descent - oracle| = " << worst;
  return o;
}

// --- 8 ---------------------------------------------------------------------

std::string run_cli(const std::string& args, int& status) {
  const std::string cmd = std::string(CSR_CLI_PATH) + " " + args + " 2>/dev/null";
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    status = -1;
    return out;
  }
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
  const int raw = pclose(pipe);
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

Outcome cli_determinism() {
  Outcome o;
  const std::string quick = " --grid 4 --refinements 1 --multistarts 2 --seed 11";
  const std::string exp = " --mu-points 4 --theta-points 4 --lambda-points 4";
  const auto k1 = " --problem " + testing::fixture_path("k1_asymmetric") +
                  " --rates 0.02 --distortions 0.05";
  const auto k2 = " --problem " + testing::fixture_path("k2_plain") +
                  " --rates 0.4,0.8 --distortions 0.15,0.05";
  const std::vector<std::string> commands{
      "region" + k1 + quick,
      "region" + k2 + quick + " --format csv",
      "exponent" + k1 + quick + exp,
      "exponent" + k2 + quick + exp + " --log-base 2",
      "simulate" + k1 + quick + " --n 4",
      "simulate" + k2 + quick + " --n 3 --samples 50000",
      "verify" + k1 + quick + exp + " --n 2-4",
      "verify" + k1 + quick + exp + " --n 2,3 --format csv",
  };
  for (const auto& c : commands) {
    int s1 = 0, s2 = 0;
    const auto a = run_cli(c, s1), b = run_cli(c, s2);
    if (a.empty() || s1 != s2 || a != b || s1 == 1 || s1 == 2) o.fail(c);
  }
  o.detail << " " << commands.size() << " commands run twice";
  return o;
}

}  // namespace

int main() {
  bool all = true;
  auto t0 = Clock::now();
  auto o1 = classical_boundary();
  report(1, o1, seconds_since(t0));
  all = all && o1.pass;

  t0 = Clock::now();
  const auto results = sweep_fixtures();
  const double sweep_secs = seconds_since(t0);
  auto o2 = dichotomy(results);
  if (sweep_secs > 600) o2.fail("sweep exceeded 10 min");
  report(2, o2, sweep_secs);
  all = all && o2.pass;

  auto o3 = ordering(results);
  report(3, o3, 0.0);
  all = all && o3.pass;

  t0 = Clock::now();
  auto o4 = cumulant_invariants();
  report(4, o4, seconds_since(t0));
  all = all && o4.pass;

  t0 = Clock::now();
  auto o5 = converse_bound(results);
  report(5, o5, seconds_since(t0));
  all = all && o5.pass;

  t0 = Clock::now();
  auto o6 = simulator_consistency();
  report(6, o6, seconds_since(t0));
  all = all && o6.pass;

  t0 = Clock::now();
  auto o7 = oracle_equivalence();
  report(7, o7, seconds_since(t0));
  all = all && o7.pass;

  t0 = Clock::now();
  auto o8 = cli_determinism();
  report(8, o8, seconds_since(t0));
  all = all && o8.pass;

  return all ? 0 : 1;
}
