#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csr/channel_chain.hpp"
#include "csr/problem.hpp"

namespace csr::testing {

struct FixturePoint {
  RateDistortionPoint point;
  std::string expect;
};

struct Fixture {
  std::string name;
  SourceProblem problem;
  std::vector<FixturePoint> points;
};

inline std::string fixture_path(const std::string& name) {
  return std::string(CSR_FIXTURE_DIR) + "/" + name + ".json";
}

inline Fixture load_fixture(const std::string& name) {
  std::ifstream in(fixture_path(name));
  nlohmann::json doc;
  in >> doc;
  Fixture f{name, load_problem(doc.dump()), {}};
  for (const auto& p : doc.at("points"))
    f.points.push_back({{p.at("rates").get<std::vector<double>>(),
                         p.at("distortions").get<std::vector<double>>()},
                        p.at("expect").get<std::string>()});
  return f;
}

inline const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names{"k1_bern_indep", "k1_dsbs", "k1_asymmetric",
                                              "k2_plain", "k2_side_info"};
  return names;
}

inline double h2(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1 - p) * std::log(1 - p);
}

/// k = 1, X ~ Bern(p), Y uniform and independent of X, Hamming distortion.
inline SourceProblem bernoulli_problem(double p, std::size_t y_size = 2) {
  std::vector<double> joint;
  for (double px : {1 - p, p})
    for (std::size_t y = 0; y < y_size; ++y) joint.push_back(px / static_cast<double>(y_size));
  return SourceProblem(JointPmf({{"X", 2}, {"Y1", y_size}}, joint), {2}, {{0, 1, 1, 0}});
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n,
                                          double zero_fraction = 0.0) {
  std::exponential_distribution<double> e(1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = u(rng) < zero_fraction ? 0.0 : e(rng);
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    s = 1.0;
  }
  for (auto& x : v) x /= s;
  return v;
}

/// Random joint over T that is zero wherever P_{XY} is zero.
inline FreeJoint random_free_joint(const SourceProblem& problem, std::vector<std::size_t> w_sizes,
                                   std::mt19937_64& rng, double zero_fraction = 0.0) {
  const TLayout layout(problem, w_sizes);
  auto v = random_simplex(rng, layout.cells(), zero_fraction);
  double s = 0.0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const auto idx = layout.unflatten(t);
    std::size_t yc = 0;
    for (std::size_t j = 0; j < problem.k(); ++j) yc = yc * problem.y_size(j) + idx[1 + j];
    if (problem.joint()[idx[0] * problem.y_cells() + yc] <= 0.0) v[t] = 0.0;
    s += v[t];
  }
  for (auto& x : v) x /= s;
  return {w_sizes, JointPmf(layout.axes(), v)};
}

inline AuxiliarySystem random_aux(const SourceProblem& problem, std::vector<std::size_t> w_sizes,
                                  std::mt19937_64& rng, bool stochastic_decoders = false) {
  const ChannelChain chain(problem.x_size(), w_sizes);
  std::vector<std::vector<double>> ch(problem.k());
  for (std::size_t j = 0; j < problem.k(); ++j)
    for (std::size_t r = 0; r < chain.rows(j); ++r)
      for (double v : random_simplex(rng, w_sizes[j])) ch[j].push_back(v);
  AuxiliarySystem aux;
  aux.w_sizes = w_sizes;
  for (std::size_t j = 0; j < problem.k(); ++j) {
    aux.channels.push_back(chain.channel_pmf(ch, j));
    const std::size_t rows = chain.prefix_cells(j + 1) * problem.y_size(j);
    if (stochastic_decoders) {
      std::vector<Axis> given;
      for (std::size_t l = 0; l <= j; ++l) given.push_back({w_axis_name(l), w_sizes[l]});
      given.push_back({y_axis_name(j), problem.y_size(j)});
      std::vector<double> rowsv;
      for (std::size_t r = 0; r < rows; ++r)
        for (double v : random_simplex(rng, problem.xhat_size(j))) rowsv.push_back(v);
      aux.decoders.emplace_back(ConditionalPmf::from_rows(
          std::move(given), {{xhat_axis_name(j), problem.xhat_size(j)}}, std::move(rowsv)));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, problem.xhat_size(j) - 1);
      DeterministicDecoder d;
      for (std::size_t r = 0; r < rows; ++r) d.table.push_back(pick(rng));
      aux.decoders.emplace_back(std::move(d));
    }
  }
  return aux;
}

/// Marginal mass of the cells agreeing with `idx` on `axes`, by a full scan.
inline double scan_marginal(const JointPmf& q, const std::vector<std::size_t>& idx,
                            const std::vector<std::size_t>& axes) {
  double s = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    const auto u = q.unflatten(t);
    bool match = true;
    for (auto a : axes) match = match && u[a] == idx[a];
    if (match) s += q[t];
  }
  return s;
}

inline std::vector<std::size_t> axes_range(std::size_t from, std::size_t count) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < count; ++i) v.push_back(from + i);
  return v;
}

inline std::vector<std::size_t> cat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// omega built term by term from explicitly divided conditionals. NaN where q = 0.
inline std::vector<double> omega_oracle(const SourceProblem& problem, const JointPmf& q, double mu,
                                        const Weights& w) {
  const std::size_t k = problem.k();
  const auto X = std::vector<std::size_t>{0};
  const auto Y = axes_range(1, k);
  auto Wp = [&](std::size_t j) { return axes_range(1 + k, j); };  // W_1..W_j
  auto Hp = [&](std::size_t j) { return axes_range(1 + 2 * k, j); };
  const auto XYW = cat(cat(X, Y), Wp(k));
  std::vector<double> out(q.size(), std::nan(""));
  for (std::size_t t = 0; t < q.size(); ++t) {
    if (q[t] <= 0.0) continue;
    const auto idx = q.unflatten(t);
    auto M = [&](const std::vector<std::size_t>& axes) { return scan_marginal(q, idx, axes); };
    const std::size_t x = idx[0];
    std::size_t yc = 0;
    for (std::size_t j = 0; j < k; ++j) yc = yc * problem.y_size(j) + idx[1 + j];
    const double px = problem.px()[x];
    const double py_x = problem.joint()[x * problem.y_cells() + yc] / px;

    double v = std::log(M(X) / px);
    v += std::log((M(XYW) / M(cat(X, Wp(k)))) / py_x);
    const std::vector<std::size_t> yw1{1, 1 + k};
    const double with_h = M(cat(XYW, {1 + 2 * k})) / M(cat(yw1, {1 + 2 * k}));
    const double without_h = M(XYW) / M(yw1);
    v += std::log(with_h / without_h);
    for (std::size_t j = 1; j < k; ++j) {
      const double num = M(cat(XYW, Hp(j + 1))) / M(cat(XYW, Hp(j)));
      const auto yjw = cat({1 + j}, Wp(j + 1));
      const double den = M(cat(yjw, {1 + 2 * k + j})) / M(yjw);
      v += std::log(num / den);
    }
    v += mu * w.alpha[0] * std::log(M({0, 1 + k}) / M({1 + k}) / px);
    for (std::size_t j = 1; j < k; ++j) {
      const double cur = M(cat(X, Wp(j + 1))) / M(Wp(j + 1));
      const double prev = M(cat(X, Wp(j))) / M(Wp(j));
      v += mu * w.alpha[j] * std::log(cur / prev);
    }
    for (std::size_t j = 0; j < k; ++j)
      v += mu * w.beta[j] * problem.distortion(j, x, idx[1 + 2 * k + j]);
    out[t] = v;
  }
  return out;
}

inline std::vector<double> tilde_oracle(const SourceProblem& problem, const JointPmf& p,
                                        const Weights& w) {
  const std::size_t k = problem.k();
  auto Wp = [&](std::size_t j) { return axes_range(1 + k, j); };
  std::vector<double> out(p.size(), std::nan(""));
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t] <= 0.0) continue;
    const auto idx = p.unflatten(t);
    auto M = [&](const std::vector<std::size_t>& axes) { return scan_marginal(p, idx, axes); };
    const double px = problem.px()[idx[0]];
    double v = w.alpha[0] * std::log(M({0, 1 + k}) / M({1 + k}) / px);
    for (std::size_t j = 1; j < k; ++j) {
      const double cur = M(cat({0}, Wp(j + 1))) / M(Wp(j + 1));
      const double prev = M(cat({0}, Wp(j))) / M(Wp(j));
      v += w.alpha[j] * std::log(cur / prev);
    }
    for (std::size_t j = 0; j < k; ++j) v += w.beta[j] * problem.distortion(j, idx[0], idx[1 + 2 * k + j]);
    out[t] = v;
  }
  return out;
}

inline Weights random_weights(std::mt19937_64& rng, std::size_t k) {
  const auto v = random_simplex(rng, 2 * k);
  Weights w;
  for (std::size_t j = 0; j < k; ++j) {
    w.alpha.push_back(v[2 * j]);
    w.beta.push_back(v[2 * j + 1]);
  }
  // exact simplex sum
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += w.alpha[j] + w.beta[j];
  w.beta.back() += 1.0 - s;
  if (w.beta.back() < 0.0) w.beta.back() = 0.0;
  return w;
}

}  // namespace csr::testing
