#include "csr/exponent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csr/channel_chain.hpp"
#include "csr/errors.hpp"
#include "csr/log_marginal.hpp"

namespace csr {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> iota_range(std::size_t from, std::size_t to_inclusive) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i <= to_inclusive; ++i) v.push_back(i);
  return v;
}

std::vector<std::size_t> join(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

// Axis index helpers for the T layout of a k-user problem.
struct TAxes {
  std::size_t k;
  std::size_t x() const { return 0; }
  std::size_t y(std::size_t j) const { return 1 + j; }
  std::size_t w(std::size_t j) const { return 1 + k + j; }
  std::size_t xhat(std::size_t j) const { return 1 + 2 * k + j; }
  std::vector<std::size_t> ys() const { return iota_range(1, k); }
  // W_1 .. W_{j+1} for 0-based j; empty for j = -1 encoded as count 0
  std::vector<std::size_t> w_prefix(std::size_t count) const {
    std::vector<std::size_t> v;
    for (std::size_t l = 0; l < count; ++l) v.push_back(w(l));
    return v;
  }
  std::vector<std::size_t> xhat_prefix(std::size_t count) const {
    std::vector<std::size_t> v;
    for (std::size_t l = 0; l < count; ++l) v.push_back(xhat(l));
    return v;
  }
};

// omega = form(q) + offset, for a fixed (mu, weights) and T layout.
struct OmegaSetup {
  TLayout layout;
  LogMarginalForm form;
  std::vector<double> offset;  // +inf where P_{XY} = 0
  std::vector<std::size_t> active;

  OmegaSetup(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes, double mu,
             const Weights& weights)
      : layout(problem, w_sizes), form(layout.dims()) {
    const std::size_t k = problem.k();
    const TAxes ax{k};
    const auto xyw = join(join({ax.x()}, ax.ys()), ax.w_prefix(k));
    // log Q_X
    form.add({ax.x()}, 1.0);
    // log Q_{Y^k | X W^k}
    form.add(xyw, 1.0);
    form.add(join({ax.x()}, ax.w_prefix(k)), -1.0);
    // log Q_{. | Y_1 W_1 Xhat_1} - log Q_{. | Y_1 W_1}
    form.add(join(xyw, {ax.xhat(0)}), 1.0);
    form.add({ax.y(0), ax.w(0), ax.xhat(0)}, -1.0);
    form.add(xyw, -1.0);
    form.add({ax.y(0), ax.w(0)}, 1.0);
    // log Q_{Xhat_j | X Y^k W^k Xhat^{j-1}} - log Q_{Xhat_j | Y_j W^j}
    for (std::size_t j = 1; j < k; ++j) {
      form.add(join(xyw, ax.xhat_prefix(j + 1)), 1.0);
      form.add(join(xyw, ax.xhat_prefix(j)), -1.0);
      form.add(join(join({ax.y(j)}, ax.w_prefix(j + 1)), {ax.xhat(j)}), -1.0);
      form.add(join({ax.y(j)}, ax.w_prefix(j + 1)), 1.0);
    }
    // mu alpha_1 log Q_{X|W_1}, mu alpha_j log Q_{X|W^j} / Q_{X|W^{j-1}}
    const double a1 = mu * weights.alpha[0];
    form.add({ax.x(), ax.w(0)}, a1);
    form.add({ax.w(0)}, -a1);
    for (std::size_t j = 1; j < k; ++j) {
      const double a = mu * weights.alpha[j];
      form.add(join({ax.x()}, ax.w_prefix(j + 1)), a);
      form.add(ax.w_prefix(j + 1), -a);
      form.add(join({ax.x()}, ax.w_prefix(j)), -a);
      form.add(ax.w_prefix(j), a);
    }

    offset.assign(layout.cells(), 0.0);
    std::vector<std::size_t> idx(layout.rank(), 0);
    for (std::size_t t = 0; t < layout.cells(); ++t) {
      const std::size_t x = idx[0];
      std::size_t ycell = 0;
      for (std::size_t j = 0; j < k; ++j) ycell = ycell * problem.y_size(j) + idx[ax.y(j)];
      const double pxy = problem.joint()[x * problem.y_cells() + ycell];
      if (pxy > 0.0) {
        double h = -std::log(pxy) - a1 * std::log(problem.px()[x]);
        for (std::size_t j = 0; j < k; ++j)
          h += mu * weights.beta[j] * problem.distortion(j, x, idx[ax.xhat(j)]);
        offset[t] = h;
        active.push_back(t);
      } else {
        offset[t] = kInf;
      }
      for (std::size_t a = layout.rank(); a-- > 0;) {
        if (++idx[a] < layout.dims()[a]) break;
        idx[a] = 0;
      }
    }
  }

  void check_support(std::span<const double> q) const {
    for (std::size_t t = 0; t < q.size(); ++t)
      if (q[t] > 0.0 && std::isinf(offset[t]))
        throw NumericalDomainError(
            "omega: Q has mass on a cell where P_{XY} is zero (P_{Y|X} factor undefined)");
  }

  // Omega on a joint supported inside the active set.
  double omega(std::span<const double> q, double theta, LogMarginalForm::Workspace& ws,
               std::span<double> cell_grad = {}) const {
    if (theta == 0.0) {
      if (!cell_grad.empty()) std::fill(cell_grad.begin(), cell_grad.end(), 0.0);
      return 0.0;
    }
    return form.minus_cgf(q, theta, offset, ws, cell_grad);
  }
};

// omega-tilde = form(p) + offset on the T layout.
struct TildeSetup {
  TLayout layout;
  LogMarginalForm form;
  std::vector<double> offset;

  TildeSetup(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes,
             const Weights& weights)
      : layout(problem, w_sizes), form(layout.dims()) {
    const std::size_t k = problem.k();
    const TAxes ax{k};
    const double a1 = weights.alpha[0];
    form.add({ax.x(), ax.w(0)}, a1);
    form.add({ax.w(0)}, -a1);
    for (std::size_t j = 1; j < k; ++j) {
      const double a = weights.alpha[j];
      form.add(join({ax.x()}, ax.w_prefix(j + 1)), a);
      form.add(ax.w_prefix(j + 1), -a);
      form.add(join({ax.x()}, ax.w_prefix(j)), -a);
      form.add(ax.w_prefix(j), a);
    }
    offset.assign(layout.cells(), 0.0);
    std::vector<std::size_t> idx(layout.rank(), 0);
    for (std::size_t t = 0; t < layout.cells(); ++t) {
      const std::size_t x = idx[0];
      double h = -a1 * std::log(problem.px()[x]);
      for (std::size_t j = 0; j < k; ++j)
        h += weights.beta[j] * problem.distortion(j, x, idx[ax.xhat(j)]);
      offset[t] = h;
      for (std::size_t a = layout.rank(); a-- > 0;) {
        if (++idx[a] < layout.dims()[a]) break;
        idx[a] = 0;
      }
    }
  }
};

std::vector<std::size_t> w_sizes_of(const SourceProblem& problem, const JointPmf& joint) {
  const std::size_t k = problem.k();
  if (joint.rank() != 1 + 3 * k) throw InputError("joint must be over T");
  std::vector<std::size_t> w;
  for (std::size_t j = 0; j < k; ++j) w.push_back(joint.axes()[1 + k + j].size);
  if (joint.axes() != TLayout(problem, w).axes())
    throw InputError("joint axes do not match the T layout");
  return w;
}

}  // namespace

std::vector<double> omega_values(const SourceProblem& problem, const FreeJoint& q, double mu,
                                 const Weights& weights) {
  weights.validate(problem.k());
  const OmegaSetup setup(problem, q.w_sizes, mu, weights);
  setup.check_support(q.joint.values());
  LogMarginalForm::Workspace ws;
  setup.form.evaluate(q.joint.values(), ws);
  std::vector<double> out(setup.layout.cells(), kNaN);
  for (std::size_t t = 0; t < out.size(); ++t)
    if (q.joint[t] > 0.0) out[t] = ws.values[t] + setup.offset[t];
  return out;
}

double omega_cell(const SourceProblem& problem, const FreeJoint& q, double mu,
                  const Weights& weights, const std::vector<std::size_t>& t) {
  const std::size_t flat = q.joint.flat_index(t);
  if (!(q.joint[flat] > 0.0)) throw InputError("omega is only evaluated on cells with Q_T(t) > 0");
  return omega_values(problem, q, mu, weights)[flat];
}

OmegaEvaluation big_omega(const SourceProblem& problem, const FreeJoint& q,
                          const ParameterTuple& params) {
  if (!(params.theta >= 0.0)) throw InputError("theta must be >= 0");
  if (!(params.mu >= 0.0)) throw InputError("mu must be >= 0");
  params.weights.validate(problem.k());
  OmegaEvaluation ev{q, params, omega_values(problem, q, params.mu, params.weights), 0.0};
  if (params.theta == 0.0) return ev;
  const OmegaSetup setup(problem, q.w_sizes, params.mu, params.weights);
  LogMarginalForm::Workspace ws;
  ev.value = setup.omega(q.joint.values(), params.theta, ws);
  return ev;
}

double expected_omega(const SourceProblem& problem, const FreeJoint& q, double mu,
                      const Weights& weights) {
  const auto w = omega_values(problem, q, mu, weights);
  double e = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t)
    if (q.joint[t] > 0.0) e += q.joint[t] * w[t];
  return e;
}

std::vector<std::size_t> exponent_w_sizes(const SourceProblem& problem,
                                          const InnerOptions& options) {
  if (!options.w_sizes.empty()) {
    if (options.w_sizes.size() != problem.k()) throw InputError("need one W size per user");
    return options.w_sizes;
  }
  return cardinality_caps(problem, options.caps);
}

namespace {

FreeJoint free_joint_from(const TLayout& layout, std::vector<double> q) {
  // renormalise against accumulated rounding
  const double s = std::accumulate(q.begin(), q.end(), 0.0);
  for (auto& v : q) v /= s;
  return FreeJoint{layout.w_sizes(), JointPmf(layout.axes(), std::move(q))};
}

std::vector<double> product_start(const SourceProblem& problem, const OmegaSetup& setup) {
  std::vector<double> q(setup.layout.cells(), 0.0);
  double rest = 1.0;
  for (std::size_t j = 0; j < problem.k(); ++j)
    rest *= static_cast<double>(setup.layout.w_sizes()[j] * problem.xhat_size(j));
  for (std::size_t t : setup.active) {
    const auto idx = setup.layout.unflatten(t);
    std::size_t ycell = 0;
    for (std::size_t j = 0; j < problem.k(); ++j) ycell = ycell * problem.y_size(j) + idx[1 + j];
    q[t] = problem.joint()[idx[0] * problem.y_cells() + ycell] / rest;
  }
  return q;
}

}  // namespace

InnerResult min_big_omega(const SourceProblem& problem, const ParameterTuple& params,
                          const InnerOptions& options) {
  if (!(params.theta >= 0.0) || !(params.mu >= 0.0)) throw InputError("theta, mu must be >= 0");
  params.weights.validate(problem.k());
  const auto w_sizes = exponent_w_sizes(problem, options);
  const OmegaSetup setup(problem, w_sizes, params.mu, params.weights);
  const std::size_t n = setup.active.size();
  const std::size_t cells = setup.layout.cells();

  InnerResult result;
  if (params.theta == 0.0) {
    result.q = free_joint_from(setup.layout, product_start(problem, setup));
    result.value = 0.0;
    result.descent_value = 0.0;
    result.status = SolverStatus::kConverged;
    return result;
  }

  auto expand = [&](std::span<const double> z, std::vector<double>& q) {
    q.assign(cells, 0.0);
    double m = -kInf;
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (q[setup.active[i]] = std::exp(z[i] - m));
    for (std::size_t i = 0; i < n; ++i) q[setup.active[i]] /= s;
  };
  const SmoothObjective objective = [&](std::span<const double> z, std::span<double> grad) {
    std::vector<double> q;
    expand(z, q);
    LogMarginalForm::Workspace ws;
    std::vector<double> h(grad.empty() ? 0 : cells);
    const double v = setup.omega(q, params.theta, ws, h);
    if (!grad.empty()) {
      std::vector<double> qa(n), ha(n);
      for (std::size_t i = 0; i < n; ++i) {
        qa[i] = q[setup.active[i]];
        ha[i] = h[setup.active[i]];
      }
      softmax_backprop(qa, ha, grad);
    }
    return v;
  };
  auto logits_of = [&](std::span<const double> q) {
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = std::log(std::max(q[setup.active[i]], 1e-14));
    return z;
  };

  // starting points: caller seeds, the product start, then random logits
  std::vector<std::vector<double>> starts;
  double best_value = kInf;
  std::vector<double> best_q;
  bool best_converged = false;
  for (const auto& seed : options.seeds) {
    if (seed.axes() != setup.layout.axes()) throw InputError("seed joint is not over T");
    setup.check_support(seed.values());
    LogMarginalForm::Workspace ws;
    const double v = setup.omega(seed.values(), params.theta, ws);
    if (v < best_value) {
      best_value = v;
      best_q.assign(seed.values().begin(), seed.values().end());
      best_converged = true;
    }
    starts.push_back(logits_of(seed.values()));
  }
  starts.push_back(logits_of(product_start(problem, setup)));
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (std::size_t s = 1; s < std::max<std::size_t>(options.multistarts, 1); ++s) {
    std::mt19937_64 r(derive_seed(options.seed, s));
    std::vector<double> z(n);
    for (auto& v : z) v = normal(r);
    starts.push_back(std::move(z));
  }

  std::vector<LbfgsResult> runs(starts.size());
  for (std::size_t s = 0; s < starts.size(); ++s)
    runs[s] = minimize_lbfgs(objective, starts[s], options.lbfgs);
  double descent_best = kInf;
  for (const auto& run : runs) {
    descent_best = std::min(descent_best, run.value);
    if (run.value < best_value) {
      best_value = run.value;
      expand(run.x, best_q);
      best_converged = run.converged;
    }
  }
  result.descent_value = descent_best;
  result.status = best_converged ? SolverStatus::kConverged : SolverStatus::kMultistartBest;
  result.warning = !best_converged;

  if (options.oracle && cells <= 4096) {
    InnerResult oracle = grid_oracle_min_big_omega(problem, params, options);
    result.oracle_value = oracle.value;
    if (oracle.value < best_value) {
      best_value = oracle.value;
      best_q.assign(oracle.q.joint.values().begin(), oracle.q.joint.values().end());
    }
    result.status = SolverStatus::kGridCertified;
    result.warning = false;
  }

  result.q = free_joint_from(setup.layout, best_q);
  LogMarginalForm::Workspace ws;
  result.value = setup.omega(result.q.joint.values(), params.theta, ws);
  return result;
}

constexpr double kOracleMix = 0.02;

InnerResult grid_oracle_min_big_omega(const SourceProblem& problem, const ParameterTuple& params,
                                      const InnerOptions& options) {
  params.weights.validate(problem.k());
  const auto w_sizes = exponent_w_sizes(problem, options);
  const OmegaSetup setup(problem, w_sizes, params.mu, params.weights);
  const std::size_t n = setup.active.size();
  const std::size_t cells = setup.layout.cells();
  if (cells > 4096) throw BudgetError("grid oracle is limited to |T| <= 4096");

  std::vector<double> full(cells, 0.0);
  auto value_of = [&](std::span<const double> qa) {
    for (std::size_t i = 0; i < n; ++i) full[setup.active[i]] = qa[i];
    LogMarginalForm::Workspace ws;
    return setup.omega(full, params.theta, ws);
  };

  std::size_t resolution = 1;
  while (simplex_lattice_size(n, resolution + 1) <= options.oracle_lattice_budget) ++resolution;

  // keep the best few lattice points as pattern-search starts
  const std::size_t keep = std::max<std::size_t>(options.oracle_restarts, 1);
  std::vector<std::pair<double, std::vector<double>>> best;
  for_each_simplex_lattice_point(n, resolution, [&](std::span<const double> qa) {
    const double v = value_of(qa);
    if (best.size() < keep || v < best.back().first) {
      best.emplace_back(v, std::vector<double>(qa.begin(), qa.end()));
      std::stable_sort(best.begin(), best.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      if (best.size() > keep) best.pop_back();
    }
  });

  // coarse lattices (large n) only see near-vertex points; add the product point
  // and a few Dirichlet draws so other basins get a start as well
  auto add_start = [&](std::vector<double> qa) {
    const double v = value_of(qa);
    best.emplace_back(v, std::move(qa));
  };
  {
    const auto prod = product_start(problem, setup);
    std::vector<double> qa(n);
    for (std::size_t i = 0; i < n; ++i) qa[i] = prod[setup.active[i]];
    const double s = std::accumulate(qa.begin(), qa.end(), 0.0);
    for (double& v : qa) v /= s;
    add_start(std::move(qa));
  }
  std::gamma_distribution<double> gamma(0.5, 1.0);
  for (std::size_t r = 0; r < keep; ++r) {
    std::mt19937_64 rng(derive_seed(options.seed ^ 0x0dac1eULL, r));
    std::vector<double> qa(n);
    for (double& v : qa) v = gamma(rng);
    const double s = std::accumulate(qa.begin(), qa.end(), 0.0);
    for (double& v : qa) v /= s;
    add_start(std::move(qa));
  }

  PatternSearchOptions pattern = options.pattern;
  pattern.all_pairs = n <= 64;
  pattern.initial_step = std::min(pattern.initial_step, 0.5 / static_cast<double>(resolution));
  InnerResult result;
  result.value = kInf;
  std::vector<double> best_q;
  // each lattice point is searched as is and pulled slightly into the interior,
  // since a start on a face can stall where single mass transfers all go uphill
  for (auto& [v0, start] : best) {
    std::vector<double> inner(start);
    for (double& v : inner) v = (1.0 - kOracleMix) * v + kOracleMix / static_cast<double>(n);
    for (const auto* s : {&start, &inner}) {
      const auto ps = simplex_pattern_search(value_of, *s, pattern);
      if (ps.value < result.value) {
        result.value = ps.value;
        best_q = ps.q;
        result.warning = ps.budget_exhausted;
      }
    }
  }
  // the winner may still sit on a face; re-search from a lightly mixed copy until it settles
  for (int round = 0; round < 8; ++round) {
    std::vector<double> mixed(best_q);
    for (double& v : mixed) v = (1.0 - kOracleMix) * v + kOracleMix / static_cast<double>(n);
    const auto ps = simplex_pattern_search(value_of, mixed, pattern);
    if (!(ps.value < result.value - 1e-12)) break;
    result.value = ps.value;
    best_q = ps.q;
    result.warning = ps.budget_exhausted;
  }
  std::vector<double> q(cells, 0.0);
  for (std::size_t i = 0; i < n; ++i) q[setup.active[i]] = best_q[i];
  result.q = free_joint_from(setup.layout, std::move(q));
  LogMarginalForm::Workspace ws;
  result.value = setup.omega(result.q.joint.values(), params.theta, ws);
  result.oracle_value = result.value;
  result.status = SolverStatus::kGridCertified;
  return result;
}

double f_denominator(std::size_t k, double theta, double mu, const Weights& weights) {
  const double asum = std::accumulate(weights.alpha.begin(), weights.alpha.end(), 0.0);
  return 1.0 + (2.0 * static_cast<double>(k) + 2.0) * theta + 2.0 * theta * mu * asum;
}

double tilde_denominator(std::size_t k, double lambda, const Weights& weights) {
  const double c = 2.0 * static_cast<double>(k) + 3.0;
  const double asum = std::accumulate(weights.alpha.begin(), weights.alpha.end(), 0.0);
  const double tail = asum - weights.alpha[0];
  return c + lambda * weights.alpha_max() + lambda * c * tail + 2.0 * lambda * asum;
}

std::vector<double> tilde_omega_values(const SourceProblem& problem, const JointPmf& p,
                                       const Weights& weights) {
  weights.validate(problem.k());
  const TildeSetup setup(problem, w_sizes_of(problem, p), weights);
  LogMarginalForm::Workspace ws;
  setup.form.evaluate(p.values(), ws);
  std::vector<double> out(p.size(), kNaN);
  for (std::size_t t = 0; t < out.size(); ++t)
    if (p[t] > 0.0) out[t] = ws.values[t] + setup.offset[t];
  return out;
}

double tilde_omega_cell(const SourceProblem& problem, const JointPmf& p, const Weights& weights,
                        const std::vector<std::size_t>& t) {
  const std::size_t flat = p.flat_index(t);
  if (!(p[flat] > 0.0)) throw InputError("omega-tilde is only evaluated on cells with positive mass");
  return tilde_omega_values(problem, p, weights)[flat];
}

double big_tilde_omega(const SourceProblem& problem, const JointPmf& p, double lambda,
                       const Weights& weights) {
  if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
  weights.validate(problem.k());
  if (lambda == 0.0) return 0.0;
  const TildeSetup setup(problem, w_sizes_of(problem, p), weights);
  LogMarginalForm::Workspace ws;
  return setup.form.minus_cgf(p.values(), lambda, setup.offset, ws);
}

JointPmf tilted_distribution(const SourceProblem& problem, const JointPmf& p, double lambda,
                             const Weights& weights) {
  if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
  weights.validate(problem.k());
  if (lambda == 0.0) return p;
  const TildeSetup setup(problem, w_sizes_of(problem, p), weights);
  LogMarginalForm::Workspace ws;
  setup.form.minus_cgf(p.values(), lambda, setup.offset, ws);
  return JointPmf(p.axes(), ws.tilt);
}

double tilted_variance(const SourceProblem& problem, const JointPmf& p, double lambda,
                       const Weights& weights) {
  const JointPmf tilt = tilted_distribution(problem, p, lambda, weights);
  const auto w = tilde_omega_values(problem, p, weights);
  double mean = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t)
    if (tilt[t] > 0.0) mean += tilt[t] * w[t];
  double var = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t)
    if (tilt[t] > 0.0) var += tilt[t] * (w[t] - mean) * (w[t] - mean);
  return var;
}

JointPmf project_to_shell(const SourceProblem& problem, const FreeJoint& q) {
  const std::size_t k = problem.k();
  const TLayout layout(problem, q.w_sizes);
  const ChannelChain chain(problem.x_size(), q.w_sizes);
  std::vector<std::vector<double>> ch(k), dec(k);
  for (std::size_t j = 0; j < k; ++j) {
    ch[j].assign(chain.rows(j) * q.w_sizes[j], 0.0);
    dec[j].assign(chain.prefix_cells(j + 1) * problem.y_size(j) * problem.xhat_size(j), 0.0);
  }
  const TAxes ax{k};
  for (std::size_t t = 0; t < layout.cells(); ++t) {
    const double v = q.joint[t];
    if (v <= 0.0) continue;
    const auto idx = layout.unflatten(t);
    std::size_t row = idx[0];
    std::size_t wcell = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t wj = idx[ax.w(j)];
      ch[j][row * q.w_sizes[j] + wj] += v;
      row = row * q.w_sizes[j] + wj;
      wcell = wcell * q.w_sizes[j] + wj;
      const std::size_t drow = wcell * problem.y_size(j) + idx[ax.y(j)];
      dec[j][drow * problem.xhat_size(j) + idx[ax.xhat(j)]] += v;
    }
  }
  auto normalise = [](std::vector<double>& table, std::size_t width) {
    for (std::size_t r = 0; r < table.size() / width; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < width; ++c) s += table[r * width + c];
      for (std::size_t c = 0; c < width; ++c)
        table[r * width + c] = s > 0.0 ? table[r * width + c] / s : 1.0 / static_cast<double>(width);
    }
  };
  AuxiliarySystem aux;
  aux.w_sizes = q.w_sizes;
  for (std::size_t j = 0; j < k; ++j) {
    normalise(ch[j], q.w_sizes[j]);
    normalise(dec[j], problem.xhat_size(j));
    aux.channels.push_back(chain.channel_pmf(ch, j));
    std::vector<Axis> given;
    for (std::size_t l = 0; l <= j; ++l) given.push_back({w_axis_name(l), q.w_sizes[l]});
    given.push_back({y_axis_name(j), problem.y_size(j)});
    aux.decoders.emplace_back(ConditionalPmf::from_rows(
        std::move(given), {{xhat_axis_name(j), problem.xhat_size(j)}}, std::move(dec[j])));
  }
  return induce_joint(problem, aux);
}

namespace {

// Omega-tilde over the shell family for fixed deterministic decoders, as a
// function of the channel logits.
struct TildeChainEvaluator {
  const SourceProblem& problem;
  const Weights& weights;
  double lambda;
  ChannelChain chain;
  LogMarginalForm form;
  std::vector<std::vector<std::size_t>> decoders;  // per user, [wcell * |Y_j| + y] -> xhat

  TildeChainEvaluator(const SourceProblem& p, const Weights& w, double l,
                      const std::vector<std::size_t>& sizes)
      : problem(p), weights(w), lambda(l), chain(p.x_size(), sizes),
        form(information_form(chain, w)) {}

  std::size_t wcell_of(std::size_t c, std::size_t j) const {
    // c indexes (x, w^k); returns the flattened w^{j+1} prefix
    const std::size_t tail = chain.joint_cells() / (chain.x_size() * chain.prefix_cells(j + 1));
    return (c / tail) % chain.prefix_cells(j + 1);
  }

  // log g(x, w^k) = log sum_y P(y|x) prod_j exp(-lambda beta_j d_j(x, phi_j(w^j, y_j)))
  std::vector<double> log_g() const {
    const std::size_t k = chain.k();
    std::vector<double> out(chain.joint_cells());
    const std::size_t per_x = chain.prefix_cells(k);
    for (std::size_t c = 0; c < out.size(); ++c) {
      const std::size_t x = c / per_x;
      double s = 0.0;
      for (std::size_t yc = 0; yc < problem.y_cells(); ++yc) {
        const double py = problem.y_given_x(x, yc);
        if (py <= 0.0) continue;
        double e = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t y = problem.y_component(yc, j);
          const std::size_t xh = decoders[j][wcell_of(c, j) * problem.y_size(j) + y];
          e += weights.beta[j] * problem.distortion(j, x, xh);
        }
        s += py * std::exp(-lambda * e);
      }
      out[c] = std::log(s);
    }
    return out;
  }

  double operator()(std::span<const double> z, std::span<double> grad) const {
    const auto ch = chain.channels(z);
    const auto pxw = chain.joint(problem.px().values(), ch);
    const auto lg = log_g();
    std::vector<double> offset(lg.size());
    for (std::size_t c = 0; c < lg.size(); ++c) offset[c] = -lg[c] / lambda;
    LogMarginalForm::Workspace ws;
    std::vector<double> h(grad.empty() ? 0 : pxw.size());
    const double v = form.minus_cgf(pxw, lambda, offset, ws, h);
    if (!grad.empty()) chain.backprop(ch, h, grad);
    return v;
  }

  // One pass of coordinate ascent over the users' decoders; true if changed.
  bool improve_decoders(std::span<const double> z) {
    const std::size_t k = chain.k();
    const auto ch = chain.channels(z);
    const auto pxw = chain.joint(problem.px().values(), ch);
    LogMarginalForm::Workspace ws;
    form.evaluate(pxw, ws);
    std::vector<double> log_a(pxw.size(), -kInf);
    double peak = -kInf;
    for (std::size_t c = 0; c < pxw.size(); ++c) {
      if (pxw[c] <= 0.0) continue;
      log_a[c] = std::log(pxw[c]) - lambda * ws.values[c];
      peak = std::max(peak, log_a[c]);
    }
    const std::size_t per_x = chain.prefix_cells(k);
    bool changed = false;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t ny = problem.y_size(j);
      const std::size_t nxh = problem.xhat_size(j);
      std::vector<double> score(chain.prefix_cells(j + 1) * ny * nxh, 0.0);
      for (std::size_t c = 0; c < pxw.size(); ++c) {
        if (pxw[c] <= 0.0) continue;
        const double a = std::exp(log_a[c] - peak);
        const std::size_t x = c / per_x;
        const std::size_t row_base = wcell_of(c, j) * ny;
        for (std::size_t yc = 0; yc < problem.y_cells(); ++yc) {
          const double py = problem.y_given_x(x, yc);
          if (py <= 0.0) continue;
          double others = 0.0;
          for (std::size_t l = 0; l < k; ++l) {
            if (l == j) continue;
            const std::size_t yl = problem.y_component(yc, l);
            const std::size_t xh = decoders[l][wcell_of(c, l) * problem.y_size(l) + yl];
            others += weights.beta[l] * problem.distortion(l, x, xh);
          }
          const double base = a * py * std::exp(-lambda * others);
          const std::size_t row = row_base + problem.y_component(yc, j);
          for (std::size_t xh = 0; xh < nxh; ++xh)
            score[row * nxh + xh] +=
                base * std::exp(-lambda * weights.beta[j] * problem.distortion(j, x, xh));
        }
      }
      for (std::size_t row = 0; row < decoders[j].size(); ++row) {
        std::size_t arg = decoders[j][row];
        for (std::size_t xh = 0; xh < nxh; ++xh)
          if (score[row * nxh + xh] > score[row * nxh + arg] * (1.0 + 1e-12)) arg = xh;
        if (arg != decoders[j][row]) {
          decoders[j][row] = arg;
          changed = true;
        }
      }
    }
    return changed;
  }

  AuxiliarySystem system(std::span<const double> z) const {
    const auto ch = chain.channels(z);
    AuxiliarySystem aux;
    aux.w_sizes = chain.w_sizes();
    for (std::size_t j = 0; j < chain.k(); ++j) {
      aux.channels.push_back(chain.channel_pmf(ch, j));
      aux.decoders.emplace_back(DeterministicDecoder{decoders[j]});
    }
    return aux;
  }
};

std::vector<std::size_t> decoder_table(const SourceProblem& problem,
                                       const std::vector<std::size_t>& w_sizes, std::size_t j,
                                       const Decoder& d) {
  if (const auto* det = std::get_if<DeterministicDecoder>(&d)) return det->table;
  const auto& c = std::get<ConditionalPmf>(d);
  std::vector<std::size_t> table(c.given_cells());
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto row = c.row(r);
    table[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  (void)problem;
  (void)w_sizes;
  (void)j;
  return table;
}

}  // namespace

TildeInnerResult min_big_tilde_omega(const SourceProblem& problem, const TildeParameters& params,
                                     const InnerOptions& options,
                                     const std::vector<AuxiliarySystem>& seeds) {
  params.validate(problem.k());
  const auto w_sizes = exponent_w_sizes(problem, options);
  const std::size_t k = problem.k();
  TildeChainEvaluator eval(problem, params.weights, params.lambda, w_sizes);
  const ChannelChain& chain = eval.chain;

  // starting channel logits and decoder tables
  std::vector<std::pair<std::vector<double>, std::vector<std::vector<std::size_t>>>> starts;
  auto closed_form = [&](std::span<const double> z) {
    const auto ch = chain.channels(z);
    std::vector<ConditionalPmf> pmfs;
    for (std::size_t j = 0; j < k; ++j) pmfs.push_back(chain.channel_pmf(ch, j));
    std::vector<std::vector<std::size_t>> tables;
    const auto decs = best_decoders(problem, w_sizes, pmfs);
    for (std::size_t j = 0; j < k; ++j) tables.push_back(decoder_table(problem, w_sizes, j, decs[j]));
    return tables;
  };
  for (const auto& s : seeds) {
    if (s.w_sizes != w_sizes) continue;
    std::vector<std::vector<double>> ch;
    for (const auto& c : s.channels) ch.emplace_back(c.values().begin(), c.values().end());
    std::vector<std::vector<std::size_t>> tables;
    for (std::size_t j = 0; j < k; ++j)
      tables.push_back(decoder_table(problem, w_sizes, j, s.decoders[j]));
    starts.emplace_back(chain.logits_from(ch), std::move(tables));
  }
  {
    // near-identity and near-constant chains
    std::vector<double> ident(chain.parameter_count(), 0.0), constant(chain.parameter_count(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nw = w_sizes[j];
      const std::size_t per_x = chain.rows(j) / chain.x_size();
      for (std::size_t r = 0; r < chain.rows(j); ++r) {
        ident[chain.parameter_offset(j) + r * nw + (r / per_x) % nw] = 6.0;
        constant[chain.parameter_offset(j) + r * nw] = 6.0;
      }
    }
    starts.emplace_back(ident, closed_form(ident));
    starts.emplace_back(constant, closed_form(constant));
  }
  std::normal_distribution<double> normal(0.0, 2.0);
  for (std::size_t s = 2; s < std::max<std::size_t>(options.multistarts, 2); ++s) {
    std::mt19937_64 rng(derive_seed(options.seed ^ 0x7417dULL, s));
    std::vector<double> z(chain.parameter_count());
    for (auto& v : z) v = normal(rng);
    starts.emplace_back(z, closed_form(z));
  }

  double best_value = kInf;
  AuxiliarySystem best;
  for (auto& [z0, tables] : starts) {
    eval.decoders = tables;
    std::vector<double> z = z0;
    double value = eval(z, {});
    for (int round = 0; round < 8; ++round) {
      if (params.lambda > 0.0) {
        const auto run = minimize_lbfgs(eval, z, options.lbfgs);
        if (run.value <= value) {
          z = run.x;
          value = run.value;
        }
      }
      if (!eval.improve_decoders(z)) break;
      const double after = eval(z, {});
      if (!(after < value - 1e-13)) {
        value = std::min(value, after);
        break;
      }
      value = after;
    }
    if (value < best_value) {
      best_value = value;
      best = eval.system(z);
    }
  }
  TildeInnerResult result;
  result.argmin = best;
  result.p = induce_joint(problem, best);
  result.value = big_tilde_omega(problem, result.p, params.lambda, params.weights);
  return result;
}

double certificate_value(double delta, double rho, std::size_t k) {
  if (!(delta > 0.0)) throw InputError("certificate needs a point outside the region (delta > 0)");
  if (!(rho > 0.0)) return 0.0;
  const double m = std::min(delta, rho);
  return m * m / (2.0 * (2.0 * static_cast<double>(k) + 9.0) * rho);
}

namespace {

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g;
  if (n == 0) return g;
  if (n == 1 || hi <= lo) return {hi};
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    g.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1)));
  return g;
}

double theta_edge(const ExponentOptions& o, double mu, const Weights& w) {
  return std::min(o.theta_max, 1.0 / (1.0 + mu * w.alpha_max()));
}

// Shared state of one sweep over a problem and point.
class Sweep {
 public:
  Sweep(const SourceProblem& problem, const RateDistortionPoint& point, const ExponentOptions& o)
      : problem_(problem), point_(point), options_(o),
        w_sizes_(exponent_w_sizes(problem, o.inner)), seeds_(problem, seed_region_options()) {}

  struct FNode {
    double value = -kInf;
    ParameterTuple params;
    InnerResult inner;
  };

  FNode f_node(const Weights& w, double theta, double mu, const std::vector<JointPmf>& extra) {
    InnerOptions inner = options_.inner;
    inner.w_sizes = w_sizes_;
    inner.seeds = extra;
    const auto& hv = seeds_.get(w);
    inner.seeds.push_back(induce_joint(problem_, hv.argmin));
    inner.seed = derive_seed(options_.inner.seed, ++counter_);
    ParameterTuple p{theta, mu, w};
    FNode node;
    node.params = p;
    node.inner = min_big_omega(problem_, p, inner);
    if (node.inner.warning) ++warnings_;
    node.value = (node.inner.value - theta * mu * kappa(point_, w)) /
                 f_denominator(problem_.k(), theta, mu, w);
    ++f_nodes_;
    consider(node);
    return node;
  }

  // Full (mu, theta) grid at one weight vector; returns the best node.
  FNode f_weight_node(const Weights& w) {
    FNode best;
    for (double mu : log_grid(options_.mu_min, options_.mu_max, options_.mu_points)) {
      const double edge = theta_edge(options_, mu, w);
      std::vector<JointPmf> warm;
      for (double theta : log_grid(edge * options_.theta_ratio, edge, options_.theta_points)) {
        FNode node = f_node(w, theta, mu, warm);
        warm = {node.inner.q.joint};
        if (node.value > best.value) best = std::move(node);
      }
    }
    return best;
  }

  struct TildeNode {
    double value = -kInf;
    TildeParameters params;
    JointPmf p;
  };

  // Tilde node at (lambda, w), cross-fed with the F node it maps to.
  TildeNode tilde_node(const Weights& w, double lambda) {
    InnerOptions inner = options_.inner;
    inner.w_sizes = w_sizes_;
    inner.seed = derive_seed(options_.inner.seed ^ 0x51ab5eedULL, ++counter_);
    const auto& hv = seeds_.get(w);
    TildeParameters tp{lambda, w};
    const auto tilde = min_big_tilde_omega(problem_, tp, inner, {hv.argmin});
    double omega_tilde = tilde.value;

    const std::size_t k = problem_.k();
    const double tail = std::accumulate(w.alpha.begin() + 1, w.alpha.end(), 0.0);
    const double mu = lambda / (1.0 + lambda * tail);
    const double theta = 1.0 / (1.0 + mu * w.alpha_max());
    if (mu > 0.0) {
      const FNode mapped = f_node(w, theta, mu, {tilde.p});
      const JointPmf projected = project_to_shell(problem_, mapped.inner.q);
      omega_tilde = std::min(omega_tilde, big_tilde_omega(problem_, projected, lambda, w));
      rho_candidates_.push_back({w, projected});
    }
    TildeNode node;
    node.params = tp;
    node.p = tilde.p;
    node.value = (omega_tilde - lambda * kappa(point_, w)) / tilde_denominator(k, lambda, w);
    ++tilde_nodes_;
    rho_candidates_.push_back({w, tilde.p});
    if (node.value > best_tilde_.value) best_tilde_ = node;
    return node;
  }

  TildeNode tilde_weight_node(const Weights& w) {
    TildeNode best;
    const double cap = w.alpha_max() > 0.0 ? std::min(options_.lambda_max, 1.0 / w.alpha_max())
                                           : options_.lambda_max;
    for (double lambda : log_grid(options_.lambda_min, cap, options_.lambda_points)) {
      TildeNode node = tilde_node(w, lambda);
      if (node.value > best.value) best = std::move(node);
    }
    return best;
  }

  double rho_from_candidates(std::size_t from, double lambda_hi) {
    const std::size_t n = std::max<std::size_t>(options_.rho_lambda_points, 2);
    for (std::size_t c = from; c < rho_candidates_.size(); ++c) {
      const auto& [w, p] = rho_candidates_[c];
      for (std::size_t i = 0; i < n; ++i) {
        const double l = lambda_hi * static_cast<double>(i) / static_cast<double>(n - 1);
        rho_ = std::max(rho_, tilted_variance(problem_, p, l, w));
      }
    }
    return rho_;
  }

  std::size_t rho_candidate_count() const { return rho_candidates_.size(); }

  // Compass refinement of the F argmax over weights with a local (mu, theta) window.
  void refine_f(std::size_t grid, std::size_t rounds) {
    const std::size_t k = problem_.k();
    double h = 1.0 / static_cast<double>(grid);
    for (std::size_t r = 0; r < rounds; ++r) {
      h *= 0.5;
      const FNodeSummary centre = best_f_;
      for (std::size_t a = 0; a < 2 * k; ++a)
        for (std::size_t b = 0; b < 2 * k; ++b) {
          if (a == b) continue;
          Weights w = centre.params.weights;
          auto coord = [&](std::size_t i) -> double& {
            return i % 2 == 0 ? w.alpha[i / 2] : w.beta[i / 2];
          };
          if (coord(b) < h - 1e-15) continue;
          coord(a) += h;
          coord(b) = std::max(coord(b) - h, 0.0);
          for (double ms : {0.5, 1.0, 2.0}) {
            const double mu = std::clamp(centre.params.mu * ms, options_.mu_min, options_.mu_max);
            const double edge = theta_edge(options_, mu, w);
            for (double ts : {0.5, 1.0, 2.0}) {
              const double theta = std::min(centre.params.theta * ts, edge);
              f_node(w, theta, mu, {});
            }
          }
        }
    }
  }

  struct FNodeSummary {
    double value = -kInf;
    ParameterTuple params;
    FreeJoint q;
  };

  const FNodeSummary& best_f() const { return best_f_; }
  const TildeNode& best_tilde() const { return best_tilde_; }
  std::size_t f_nodes() const { return f_nodes_; }
  std::size_t tilde_nodes() const { return tilde_nodes_; }
  std::size_t warnings() const { return warnings_; }
  double rho() const { return rho_; }

 private:
  RegionOptions seed_region_options() const {
    RegionOptions r = options_.membership.region;
    r.w_sizes = exponent_w_sizes(problem_, options_.inner);
    return r;
  }

  void consider(const FNode& node) {
    if (node.value > best_f_.value) {
      best_f_.value = node.value;
      best_f_.params = node.params;
      best_f_.q = node.inner.q;
    }
  }

  const SourceProblem& problem_;
  RateDistortionPoint point_;
  const ExponentOptions& options_;
  std::vector<std::size_t> w_sizes_;
  HyperplaneCache seeds_;
  std::uint64_t counter_ = 0;
  FNodeSummary best_f_;
  TildeNode best_tilde_;
  std::vector<std::pair<Weights, JointPmf>> rho_candidates_;
  double rho_ = 0.0;
  std::size_t f_nodes_ = 0;
  std::size_t tilde_nodes_ = 0;
  std::size_t warnings_ = 0;
};

void fill_f(const Sweep& sweep, const ExponentOptions& options, ExponentResult& out) {
  const auto& best = sweep.best_f();
  out.F = std::max(best.value, 0.0);
  out.argsup = best.params;
  out.argmin = best.q;
  out.argsup_at_mu_limit = best.params.mu >= options.mu_max * (1.0 - 1e-12);
  out.f_nodes = sweep.f_nodes();
}

}  // namespace

ExponentResult exponent_F(const SourceProblem& problem, const RateDistortionPoint& point,
                          const ExponentOptions& options) {
  point.validate(problem.k());
  Sweep sweep(problem, point, options);
  for (const auto& w : weight_grid(problem.k(), options.weight_grid)) sweep.f_weight_node(w);
  sweep.refine_f(options.weight_grid, options.refinements);
  ExponentResult out;
  out.point = point;
  fill_f(sweep, options, out);
  out.solver_warnings = sweep.warnings();
  return out;
}

ExponentResult evaluate_exponents(const SourceProblem& problem, const RateDistortionPoint& point,
                                  const ExponentOptions& options) {
  point.validate(problem.k());
  const std::size_t k = problem.k();
  const auto report = membership(problem, point, options.membership);

  Sweep sweep(problem, point, options);
  const auto grid = weight_grid(k, options.weight_grid);
  for (const auto& w : grid) {
    sweep.f_weight_node(w);
    sweep.tilde_weight_node(w);
  }
  sweep.refine_f(options.weight_grid, options.refinements);
  // the tilde nodes at the region witness
  sweep.tilde_weight_node(report.witness);

  double rho = sweep.rho_from_candidates(0, 1.0);
  const double delta = -report.margin;
  double cert = 0.0;
  if (delta > 0.0 && rho > 0.0) {
    for (int it = 0; it < 3; ++it) {
      const double lambda = std::min(delta, rho) / rho;
      const std::size_t before = sweep.rho_candidate_count();
      sweep.tilde_node(report.witness, lambda);
      const double updated = sweep.rho_from_candidates(before, 1.0);
      if (updated <= rho) break;
      rho = updated;
    }
    cert = certificate_value(delta, rho, k);
  }

  ExponentResult out;
  out.point = point;
  fill_f(sweep, options, out);
  out.tilde_F = std::max(sweep.best_tilde().value, 0.0);
  out.tilde_argsup = sweep.best_tilde().params;
  out.tilde_nodes = sweep.tilde_nodes();
  out.rho = rho;
  out.margin = report.margin;
  out.verdict = report.verdict;
  out.certificate = cert;
  out.solver_warnings = sweep.warnings();
  return out;
}

DispersionResult dispersion_rho(const SourceProblem& problem, const ExponentOptions& options) {
  const std::size_t k = problem.k();
  InnerOptions inner = options.inner;
  inner.w_sizes = exponent_w_sizes(problem, options.inner);
  RegionOptions region = options.membership.region;
  region.w_sizes = inner.w_sizes;
  HyperplaneCache seeds(problem, region);
  const std::size_t n = std::max<std::size_t>(options.rho_lambda_points, 2);
  double rho = 0.0;
  std::uint64_t counter = 0;
  for (const auto& w : weight_grid(k, options.weight_grid)) {
    const double cap = w.alpha_max() > 0.0 ? std::min(1.0, 1.0 / w.alpha_max()) : 1.0;
    std::vector<JointPmf> candidates{induce_joint(problem, seeds.get(w).argmin)};
    for (std::size_t i = 1; i < n; ++i) {
      const double lambda = cap * static_cast<double>(i) / static_cast<double>(n - 1);
      inner.seed = derive_seed(options.inner.seed ^ 0xd15e5ULL, ++counter);
      candidates.push_back(
          min_big_tilde_omega(problem, {lambda, w}, inner, {seeds.get(w).argmin}).p);
    }
    for (const auto& p : candidates)
      for (std::size_t i = 0; i < n; ++i) {
        const double l = static_cast<double>(i) / static_cast<double>(n - 1);
        rho = std::max(rho, tilted_variance(problem, p, l, w));
      }
  }
  return {rho, true};
}

}  // namespace csr
