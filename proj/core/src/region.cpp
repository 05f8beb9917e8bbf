#include "csr/region.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "csr/channel_chain.hpp"
#include "csr/errors.hpp"
#include "csr/log_marginal.hpp"

namespace csr {

const char* to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::kConverged: return "converged";
    case SolverStatus::kGridCertified: return "grid-certified";
    case SolverStatus::kMultistartBest: return "multistart-best";
  }
  return "unknown";
}

const char* to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kInside: return "inside";
    case Verdict::kOutside: return "outside";
    case Verdict::kBoundary: return "boundary-indeterminate";
  }
  return "unknown";
}

std::vector<std::size_t> region_w_sizes(const SourceProblem& problem, const RegionOptions& options) {
  if (!options.w_sizes.empty()) {
    if (options.w_sizes.size() != problem.k()) throw InputError("need one W size per user");
    return options.w_sizes;
  }
  return cardinality_caps(problem, options.caps);
}

std::size_t decoder_count(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes,
                          std::size_t j) {
  std::size_t domain = problem.y_size(j);
  for (std::size_t l = 0; l <= j; ++l) domain *= w_sizes[l];
  const long double c = std::pow(static_cast<long double>(problem.xhat_size(j)),
                                 static_cast<long double>(domain));
  if (c >= static_cast<long double>(std::numeric_limits<std::size_t>::max()))
    return std::numeric_limits<std::size_t>::max();
  return static_cast<std::size_t>(std::llround(c));
}

void enumerate_decoders(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes,
                        std::size_t j, std::size_t budget,
                        const std::function<void(const DeterministicDecoder&)>& visit) {
  const std::size_t count = decoder_count(problem, w_sizes, j);
  if (count > budget)
    throw BudgetError("decoder enumeration for user " + std::to_string(j + 1) + " needs " +
                      std::to_string(count) + " tables; use the closed-form decoder step");
  std::size_t domain = problem.y_size(j);
  for (std::size_t l = 0; l <= j; ++l) domain *= w_sizes[l];
  const std::size_t nxh = problem.xhat_size(j);
  DeterministicDecoder d{std::vector<std::size_t>(domain, 0)};
  for (std::size_t n = 0; n < count; ++n) {
    visit(d);
    for (std::size_t i = domain; i-- > 0;) {
      if (++d.table[i] < nxh) break;
      d.table[i] = 0;
    }
  }
}

double hyperplane_objective(const SourceProblem& problem, const Weights& weights,
                            const AuxiliarySystem& aux) {
  weights.validate(problem.k());
  const JointPmf q = induce_joint(problem, aux);
  const std::size_t k = problem.k();
  double value = 0.0;
  AxisSet prefix;
  for (std::size_t j = 0; j < k; ++j) {
    if (weights.alpha[j] > 0.0)
      value += weights.alpha[j] *
               conditional_mutual_information(q, {x_axis_name()}, {w_axis_name(j)}, prefix);
    prefix.push_back(w_axis_name(j));
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (weights.beta[j] <= 0.0) continue;
    const JointPmf m = marginalize(q, {x_axis_name(), xhat_axis_name(j)});
    double ed = 0.0;
    for (std::size_t x = 0; x < problem.x_size(); ++x)
      for (std::size_t xh = 0; xh < problem.xhat_size(j); ++xh)
        ed += m.at({x, xh}) * problem.distortion(j, x, xh);
    value += weights.beta[j] * ed;
  }
  return value;
}

namespace {

// Joint p(x, w^j) for each j from the full p(x, w^k).
std::vector<std::vector<double>> prefix_joints(const ChannelChain& chain,
                                               const std::vector<double>& pxw) {
  const std::size_t k = chain.k();
  std::vector<std::vector<double>> out(k);
  out[k - 1] = pxw;
  for (std::size_t j = k - 1; j-- > 0;) {
    const std::size_t nw = chain.w_sizes()[j + 1];
    out[j].assign(out[j + 1].size() / nw, 0.0);
    for (std::size_t c = 0; c < out[j + 1].size(); ++c) out[j][c / nw] += out[j + 1][c];
  }
  return out;
}

// Closed-form decoder of user j from p(x, w^j): per (w^j, y_j) cell, the
// reproduction with least expected distortion. Returns the table and sum of
// the minimal costs.
double closed_form_decoder(const SourceProblem& problem, std::size_t j, std::size_t wcells,
                           const std::vector<double>& pxwj, std::vector<std::size_t>& table) {
  const std::size_t ny = problem.y_size(j);
  const std::size_t nxh = problem.xhat_size(j);
  const std::size_t nx = problem.x_size();
  table.assign(wcells * ny, 0);
  double total = 0.0;
  for (std::size_t w = 0; w < wcells; ++w) {
    for (std::size_t y = 0; y < ny; ++y) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t xh = 0; xh < nxh; ++xh) {
        double c = 0.0;
        for (std::size_t x = 0; x < nx; ++x)
          c += pxwj[x * wcells + w] * problem.yj_given_x(j, x, y) * problem.distortion(j, x, xh);
        if (c < best) {
          best = c;
          arg = xh;
        }
      }
      table[w * ny + y] = arg;
      total += best;
    }
  }
  return total;
}

struct ChainEvaluator {
  const SourceProblem& problem;
  const Weights& weights;
  ChannelChain chain;
  LogMarginalForm form;

  ChainEvaluator(const SourceProblem& p, const Weights& w, const std::vector<std::size_t>& sizes)
      : problem(p), weights(w), chain(p.x_size(), sizes), form(information_form(chain, w)) {}

  double operator()(std::span<const double> z, std::span<double> grad) const {
    const auto ch = chain.channels(z);
    const auto pxw = chain.joint(problem.px().values(), ch);
    LogMarginalForm::Workspace ws;
    std::vector<double> h(grad.empty() ? 0 : pxw.size(), 0.0);
    double value = form.expectation(pxw, {}, ws, h);
    const auto pj = prefix_joints(chain, pxw);
    const std::size_t k = chain.k();
    std::vector<std::size_t> table;
    for (std::size_t j = 0; j < k; ++j) {
      if (weights.beta[j] <= 0.0) continue;
      const std::size_t wcells = chain.prefix_cells(j + 1);
      value += weights.beta[j] * closed_form_decoder(problem, j, wcells, pj[j], table);
      if (grad.empty()) continue;
      // Danskin: d/dp(x, w^j) = beta_j sum_y P(y|x) d(x, phi(w^j, y))
      const std::size_t ny = problem.y_size(j);
      const std::size_t tail = pxw.size() / pj[j].size();
      for (std::size_t c = 0; c < pxw.size(); ++c) {
        const std::size_t cj = c / tail;
        const std::size_t x = cj / wcells;
        const std::size_t w = cj % wcells;
        double g = 0.0;
        for (std::size_t y = 0; y < ny; ++y)
          g += problem.yj_given_x(j, x, y) * problem.distortion(j, x, table[w * ny + y]);
        h[c] += pxw[c] * weights.beta[j] * g;
      }
    }
    if (!grad.empty()) chain.backprop(ch, h, grad);
    return value;
  }
};

std::vector<double> seed_logits(const ChannelChain& chain, std::size_t start, std::uint64_t seed) {
  std::vector<double> z(chain.parameter_count(), 0.0);
  constexpr double kPeak = 6.0;
  if (start == 0) {
    for (std::size_t j = 0; j < chain.k(); ++j)
      for (std::size_t r = 0; r < chain.rows(j); ++r)
        z[chain.parameter_offset(j) + r * chain.w_sizes()[j]] = kPeak;
    return z;
  }
  if (start == 1) {
    for (std::size_t j = 0; j < chain.k(); ++j) {
      const std::size_t nw = chain.w_sizes()[j];
      const std::size_t per_x = chain.rows(j) / chain.x_size();
      for (std::size_t r = 0; r < chain.rows(j); ++r)
        z[chain.parameter_offset(j) + r * nw + (r / per_x) % nw] = kPeak;
    }
    return z;
  }
  std::mt19937_64 rng(derive_seed(seed, start));
  std::normal_distribution<double> n01(0.0, 2.0);
  for (auto& v : z) v = n01(rng);
  return z;
}

AuxiliarySystem system_from_logits(const SourceProblem& problem, const ChannelChain& chain, std::span<const double> z) {
  const auto ch = chain.channels(z);
  AuxiliarySystem aux;
  aux.w_sizes = chain.w_sizes();
  for (std::size_t j = 0; j < chain.k(); ++j) aux.channels.push_back(chain.channel_pmf(ch, j));
  aux.decoders = best_decoders(problem, aux.w_sizes, aux.channels);
  return aux;
}

// Visits every combination of lattice rows for the channel chain.
bool grid_search(const ChainEvaluator& eval, std::size_t resolution, std::size_t budget,
                 std::vector<double>& best_z, double& best_value) {
  const ChannelChain& chain = eval.chain;
  std::vector<std::vector<std::vector<double>>> row_points(chain.k());
  std::size_t rows_total = 0;
  long double combos = 1.0L;
  for (std::size_t j = 0; j < chain.k(); ++j) {
    for_each_simplex_lattice_point(chain.w_sizes()[j], resolution, [&](std::span<const double> q) {
      row_points[j].emplace_back(q.begin(), q.end());
    });
    for (std::size_t r = 0; r < chain.rows(j); ++r) {
      combos *= static_cast<long double>(row_points[j].size());
      ++rows_total;
    }
  }
  if (combos > static_cast<long double>(budget)) return false;
  std::vector<std::size_t> choice(rows_total, 0);
  std::vector<std::vector<double>> ch(chain.k());
  for (std::size_t j = 0; j < chain.k(); ++j) ch[j].resize(chain.rows(j) * chain.w_sizes()[j]);
  const auto n = static_cast<std::size_t>(combos);
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t slot = 0;
    for (std::size_t j = 0; j < chain.k(); ++j)
      for (std::size_t r = 0; r < chain.rows(j); ++r, ++slot) {
        const auto& pt = row_points[j][choice[slot]];
        std::copy(pt.begin(), pt.end(), ch[j].begin() + r * chain.w_sizes()[j]);
      }
    const auto z = chain.logits_from(ch);
    const double v = eval(z, {});
    if (v < best_value) {
      best_value = v;
      best_z = z;
    }
    for (std::size_t s = rows_total; s-- > 0;) {
      std::size_t j = 0, acc = 0;
      while (s >= acc + chain.rows(j)) acc += chain.rows(j++);
      if (++choice[s] < row_points[j].size()) break;
      choice[s] = 0;
    }
  }
  return true;
}

}  // namespace

std::vector<Decoder> best_decoders(const SourceProblem& problem,
                                   const std::vector<std::size_t>& w_sizes,
                                   const std::vector<ConditionalPmf>& channels) {
  ChannelChain chain(problem.x_size(), w_sizes);
  std::vector<std::vector<double>> ch;
  for (const auto& c : channels) ch.emplace_back(c.values().begin(), c.values().end());
  const auto pj = prefix_joints(chain, chain.joint(problem.px().values(), ch));
  std::vector<Decoder> out;
  for (std::size_t j = 0; j < problem.k(); ++j) {
    DeterministicDecoder d;
    closed_form_decoder(problem, j, chain.prefix_cells(j + 1), pj[j], d.table);
    out.emplace_back(std::move(d));
  }
  return out;
}

HyperplaneValue hyperplane_value(const SourceProblem& problem, const Weights& weights,
                                 const RegionOptions& options) {
  weights.validate(problem.k());
  const auto sizes = region_w_sizes(problem, options);
  const ChainEvaluator eval(problem, weights, sizes);
  const std::size_t starts = std::max<std::size_t>(options.multistarts, 1);

  std::vector<LbfgsResult> results(starts);
  parallel_for(
      starts,
      [&](std::size_t s) {
        results[s] = minimize_lbfgs(eval, seed_logits(eval.chain, s, options.seed), options.lbfgs);
      },
      options.threads);

  std::size_t best = 0;
  for (std::size_t s = 1; s < starts; ++s)
    if (results[s].value < results[best].value) best = s;

  HyperplaneValue hv;
  hv.weights = weights;
  std::vector<double> best_z = results[best].x;
  double best_value = results[best].value;
  hv.status = results[best].converged ? SolverStatus::kConverged : SolverStatus::kMultistartBest;
  hv.warning = !results[best].converged;

  if (options.grid_resolution > 0) {
    std::vector<double> grid_z;
    double grid_value = std::numeric_limits<double>::infinity();
    if (grid_search(eval, options.grid_resolution, options.grid_budget, grid_z, grid_value)) {
      const auto polished = minimize_lbfgs(eval, grid_z, options.lbfgs);
      if (polished.value < grid_value) {
        grid_z = polished.x;
        grid_value = polished.value;
      }
      if (grid_value < best_value) {
        best_value = grid_value;
        best_z = grid_z;
      }
      hv.status = SolverStatus::kGridCertified;
      hv.warning = false;
    }
  }

  hv.argmin = system_from_logits(problem, eval.chain, best_z);
  // report the value of the stored argmin so that re-evaluation reproduces it
  hv.value = eval(best_z, {});
  return hv;
}

namespace {

std::vector<long long> weight_key(const Weights& w) {
  std::vector<long long> key;
  for (std::size_t j = 0; j < w.k(); ++j) {
    key.push_back(std::llround(w.alpha[j] * 1e12));
    key.push_back(std::llround(w.beta[j] * 1e12));
  }
  return key;
}

}  // namespace

HyperplaneCache::HyperplaneCache(const SourceProblem& problem, RegionOptions options)
    : problem_(problem), options_(std::move(options)) {}

const HyperplaneValue& HyperplaneCache::get(const Weights& weights) {
  const auto key = weight_key(weights);
  {
    std::lock_guard lock(mutex_);
    if (auto it = values_.find(key); it != values_.end()) return it->second;
  }
  HyperplaneValue hv = hyperplane_value(problem_, weights, options_);
  std::lock_guard lock(mutex_);
  return values_.emplace(key, std::move(hv)).first->second;
}

std::size_t HyperplaneCache::size() const {
  std::lock_guard lock(mutex_);
  return values_.size();
}

std::vector<Weights> weight_grid(std::size_t k, std::size_t grid) {
  if (grid == 0) throw InputError("weight grid needs at least one division");
  std::vector<Weights> out;
  for_each_simplex_lattice_point(2 * k, grid, [&](std::span<const double> q) {
    Weights w;
    for (std::size_t j = 0; j < k; ++j) {
      w.alpha.push_back(q[2 * j]);
      w.beta.push_back(q[2 * j + 1]);
    }
    out.push_back(std::move(w));
  });
  return out;
}

MembershipReport membership(const SourceProblem& problem, const RateDistortionPoint& point,
                            const MembershipOptions& options, HyperplaneCache* cache) {
  point.validate(problem.k());
  std::optional<HyperplaneCache> local;
  if (cache == nullptr) {
    local.emplace(problem, options.region);
    cache = &*local;
  }
  const std::size_t k = problem.k();
  MembershipReport report;
  report.point = point;

  auto margin_at = [&](const Weights& w, double& value) {
    const auto& hv = cache->get(w);
    report.solver_warning = report.solver_warning || hv.warning;
    value = hv.value;
    ++report.nodes;
    return kappa(point, w) - hv.value;
  };

  const auto grid = weight_grid(k, options.grid);
  std::vector<const HyperplaneValue*> values(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) { values[i] = &cache->get(grid[i]); },
               options.region.threads);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ++report.nodes;
    report.solver_warning = report.solver_warning || values[i]->warning;
    const double m = kappa(point, grid[i]) - values[i]->value;
    if (m < best) {
      best = m;
      best_i = i;
    }
  }
  Weights witness = grid[best_i];
  double witness_value = values[best_i]->value;

  // Refinement: compass moves h (e_a - e_b) around the running minimiser.
  double h = 1.0 / static_cast<double>(options.grid);
  for (std::size_t round = 0; round < options.refinements; ++round) {
    h *= 0.5;
    for (int pass = 0; pass < 8; ++pass) {
      bool moved = false;
      const Weights centre = witness;
      for (std::size_t a = 0; a < 2 * k; ++a) {
        for (std::size_t b = 0; b < 2 * k; ++b) {
          if (a == b) continue;
          Weights w = centre;
          auto coord = [&](std::size_t i) -> double& {
            return i % 2 == 0 ? w.alpha[i / 2] : w.beta[i / 2];
          };
          if (coord(b) < h - 1e-15) continue;
          coord(a) += h;
          coord(b) -= h;
          if (coord(b) < 0.0) coord(b) = 0.0;
          double v = 0.0;
          const double m = margin_at(w, v);
          if (m < best) {
            best = m;
            witness = w;
            witness_value = v;
            moved = true;
          }
        }
      }
      if (!moved) break;
    }
  }

  report.margin = best;
  report.witness = witness;
  report.witness_value = witness_value;
  if (best > options.boundary_band) {
    report.verdict = Verdict::kInside;
  } else if (best < -options.boundary_band) {
    report.verdict = Verdict::kOutside;
  } else {
    report.verdict = Verdict::kBoundary;
  }
  return report;
}

namespace {

struct BaOutcome {
  double rate = 0.0;
  double distortion = 0.0;
};

BaOutcome blahut_arimoto(const Pmf& px, const std::vector<double>& d, std::size_t nxh, double s,
                         const BlahutArimotoOptions& options) {
  const std::size_t nx = px.size();
  std::vector<double> q(nxh, 1.0 / static_cast<double>(nxh));
  std::vector<double> cond(nx * nxh);
  double prev_rate = std::numeric_limits<double>::infinity();
  BaOutcome out;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t x = 0; x < nx; ++x) {
      // shift by the row minimum distortion to avoid underflow
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t xh = 0; xh < nxh; ++xh)
        if (q[xh] > 0.0) dmin = std::min(dmin, d[x * nxh + xh]);
      double z = 0.0;
      for (std::size_t xh = 0; xh < nxh; ++xh) {
        const double v = q[xh] * std::exp(-s * (d[x * nxh + xh] - dmin));
        cond[x * nxh + xh] = v;
        z += v;
      }
      for (std::size_t xh = 0; xh < nxh; ++xh) cond[x * nxh + xh] /= z;
    }
    std::fill(q.begin(), q.end(), 0.0);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t xh = 0; xh < nxh; ++xh) q[xh] += px[x] * cond[x * nxh + xh];
    out.rate = 0.0;
    out.distortion = 0.0;
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t xh = 0; xh < nxh; ++xh) {
        const double c = cond[x * nxh + xh];
        if (c <= 0.0) continue;
        out.rate += px[x] * c * std::log(c / q[xh]);
        out.distortion += px[x] * c * d[x * nxh + xh];
      }
    if (std::abs(out.rate - prev_rate) < options.tolerance) {
      out.rate = std::max(out.rate, 0.0);
      return out;
    }
    prev_rate = out.rate;
  }
  throw ConvergenceError("Blahut-Arimoto did not converge", out.rate);
}

}  // namespace

double ba_reference(const Pmf& px, const std::vector<double>& distortion, std::size_t xhat_size,
                    double D, const BlahutArimotoOptions& options) {
  const std::size_t nx = px.size();
  if (distortion.size() != nx * xhat_size) throw InputError("distortion matrix has the wrong shape");
  double dmin = 0.0;  // least achievable distortion
  double dmax = std::numeric_limits<double>::infinity();  // zero-rate distortion
  for (std::size_t x = 0; x < nx; ++x) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t xh = 0; xh < xhat_size; ++xh) m = std::min(m, distortion[x * xhat_size + xh]);
    dmin += px[x] * m;
  }
  for (std::size_t xh = 0; xh < xhat_size; ++xh) {
    double e = 0.0;
    for (std::size_t x = 0; x < nx; ++x) e += px[x] * distortion[x * xhat_size + xh];
    dmax = std::min(dmax, e);
  }
  if (D < dmin - 1e-12) throw InputError("distortion level below the least achievable distortion");
  if (D >= dmax) return 0.0;

  double lo = 0.0;    // slope with distortion above D
  double hi = 1.0;    // grow until distortion drops below D
  BaOutcome at_hi = blahut_arimoto(px, distortion, xhat_size, hi, options);
  while (at_hi.distortion > D + 1e-13 && hi < 1e4) {
    lo = hi;
    hi *= 2.0;
    at_hi = blahut_arimoto(px, distortion, xhat_size, hi, options);
  }
  if (at_hi.distortion > D + 1e-13) return at_hi.rate;  // D at the least achievable level
  BaOutcome mid_out = at_hi;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    mid_out = blahut_arimoto(px, distortion, xhat_size, mid, options);
    if (mid_out.distortion > D) {
      lo = mid;
    } else {
      hi = mid;
      at_hi = mid_out;
    }
    if (std::abs(mid_out.distortion - D) < 1e-12) break;
  }
  // first-order correction along the curve (slope -s)
  return std::max(at_hi.rate + hi * (at_hi.distortion - D), 0.0);
}

double boundary_rate(const SourceProblem& problem, double D, const MembershipOptions& options,
                     HyperplaneCache& cache, double tolerance) {
  if (problem.k() != 1) throw InputError("boundary_rate is defined for k = 1");
  double lo = 0.0;
  double hi = std::log(static_cast<double>(problem.x_size()));
  auto margin = [&](double r) {
    RateDistortionPoint p{{r}, {D}};
    return membership(problem, p, options, &cache).margin;
  };
  if (margin(lo) >= 0.0) return lo;
  for (int grow = 0; margin(hi) < 0.0; ++grow) {
    if (grow == 6) throw InputError("distortion level is not achievable at any rate");
    hi *= 2.0;
  }
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (margin(mid) >= 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace csr
