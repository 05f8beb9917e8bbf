#include "csr/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>
#include <memory>
#include <random>

#include <boost/math/special_functions/beta.hpp>

#include "csr/errors.hpp"
#include "csr/optimize.hpp"

namespace csr {
namespace {

std::size_t checked_power(std::size_t base, std::size_t exp, std::size_t limit,
                          const char* what) {
  std::size_t v = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (base != 0 && v > limit / base) throw BudgetError(what);
    v *= base;
  }
  return v;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t sample_index(std::span<const double> pmf, double u) {
  double c = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    if (pmf[i] <= 0.0) continue;
    last = i;
    c += pmf[i];
    if (u < c) return i;
  }
  return last;
}

std::size_t digit(std::size_t value, std::size_t base, std::size_t n, std::size_t i) {
  for (std::size_t t = i + 1; t < n; ++t) value /= base;
  return value % base;
}

}  // namespace

std::size_t Code::prefix_messages(std::size_t j) const {
  std::size_t m = 1;
  for (std::size_t l = 0; l <= j; ++l) m *= M[l];
  return m;
}

std::size_t Code::message_prefix(std::size_t full, std::size_t j) const {
  for (std::size_t l = j + 1; l < M.size(); ++l) full /= M[l];
  return full;
}

std::size_t Code::decode(std::size_t j, std::size_t prefix, const std::uint32_t* y_history,
                         std::size_t i) const {
  const std::size_t ny = y_sizes[j];
  if (const auto* sym = std::get_if<SymbolwiseDecoder>(&decoders[j]))
    return sym->rule[sym->codewords[prefix * n + i] * ny + y_history[i]];
  const auto& ex = std::get<ExplicitDecoder>(decoders[j]);
  std::size_t hist = 0, width = 1;
  for (std::size_t t = 0; t <= i; ++t) {
    hist = hist * ny + y_history[t];
    width *= ny;
  }
  return ex.tables[i][prefix * width + hist];
}

std::vector<std::size_t> Code::decode_sequence(std::size_t j, std::size_t prefix,
                                               const std::vector<std::uint32_t>& y) const {
  if (y.size() != n) throw InputError("side-information sequence has the wrong length");
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = decode(j, prefix, y.data(), i);
  return out;
}

void Code::validate(const SourceProblem& problem) const {
  if (M.size() != problem.k() || y_sizes.size() != problem.k() ||
      xhat_sizes.size() != problem.k())
    throw InputError("code and problem disagree on the number of users");
  if (x_size != problem.x_size()) throw InputError("code and problem disagree on |X|");
  for (std::size_t j = 0; j < problem.k(); ++j) {
    if (y_sizes[j] != problem.y_size(j) || xhat_sizes[j] != problem.xhat_size(j))
      throw InputError("code and problem disagree on alphabet sizes");
    if (M[j] == 0) throw InputError("message sets must be non-empty");
  }
  std::size_t xn = 1;
  for (std::size_t i = 0; i < n; ++i) xn *= x_size;
  if (encoder.size() != xn) throw InputError("encoder table must cover every source sequence");
  const std::size_t total = prefix_messages(M.size() - 1);
  for (auto s : encoder)
    if (s >= total) throw InputError("encoder output out of range");
  if (decoders.size() != M.size()) throw InputError("one decoder per user is required");
}

Code random_code(const SourceProblem& problem, const AuxiliarySystem& aux, std::size_t n,
                 const std::vector<std::size_t>& M, std::uint64_t seed) {
  aux.validate(problem);
  const std::size_t k = problem.k();
  if (n == 0) throw InputError("blocklength must be positive");
  if (M.size() != k) throw InputError("need one message-set size per user");
  for (auto m : M)
    if (m == 0) throw InputError("M_j must be >= 1");
  const std::size_t nx = problem.x_size();
  const std::size_t xn = checked_power(nx, n, std::size_t{1} << 26, "|X|^n too large for tables");
  std::size_t tuples = 1;
  for (auto m : M) {
    if (tuples > (std::size_t{1} << 26) / m) throw BudgetError("message tuples too many");
    tuples *= m;
  }

  // q(x, w^j) with x leading, for every stage
  std::vector<std::vector<double>> pxw(k + 1);
  pxw[0].assign(problem.px().values().begin(), problem.px().values().end());
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t nw = aux.w_sizes[j];
    pxw[j + 1].assign(pxw[j].size() * nw, 0.0);
    for (std::size_t r = 0; r < pxw[j].size(); ++r)
      for (std::size_t w = 0; w < nw; ++w) pxw[j + 1][r * nw + w] = pxw[j][r] * aux.channels[j](r, w);
  }
  // q(w^j) and q(w_j | w^{j-1})
  auto w_marginal = [&](std::size_t j) {
    std::vector<double> m(pxw[j].size() / nx, 0.0);
    for (std::size_t c = 0; c < pxw[j].size(); ++c) m[c % m.size()] += pxw[j][c];
    return m;
  };

  std::mt19937_64 rng(seed);
  Code code;
  code.n = n;
  code.M = M;
  code.x_size = nx;
  code.seed = seed;
  for (std::size_t j = 0; j < k; ++j) {
    code.y_sizes.push_back(problem.y_size(j));
    code.xhat_sizes.push_back(problem.xhat_size(j));
  }

  std::vector<std::vector<std::uint32_t>> wcells(k);
  std::size_t prefixes = 1;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t nw = aux.w_sizes[j];
    const auto prev = j == 0 ? std::vector<double>{1.0} : w_marginal(j);
    const auto cur = w_marginal(j + 1);
    const std::size_t count = prefixes * M[j];
    wcells[j].assign(count * n, 0);
    std::size_t full = 0;
    const bool exhaustive = [&] {
      std::size_t v = 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (v > M[j] / nw) return false;
        v *= nw;
      }
      return v == M[j];
    }();
    for (std::size_t p = 0; p < prefixes; ++p)
      for (std::size_t s = 0; s < M[j]; ++s, ++full)
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t before = j == 0 ? 0 : wcells[j - 1][p * n + i];
          std::size_t w;
          if (exhaustive) {
            w = digit(s, nw, n, i);
          } else {
            std::vector<double> row(nw);
            const double denom = prev[before];
            for (std::size_t v = 0; v < nw; ++v)
              row[v] = denom > 0.0 ? cur[before * nw + v] / denom : 1.0 / static_cast<double>(nw);
            w = sample_index(row, uniform01(rng));
          }
          wcells[j][full * n + i] = static_cast<std::uint32_t>(before * nw + w);
        }
    prefixes = count;
  }

  // encoder: argmax of sum_i log q(x_i, w^k_i)
  const auto& qk = pxw[k];
  const std::size_t wk = qk.size() / nx;
  code.encoder.assign(xn, 0);
  std::vector<std::size_t> xs(n);
  for (std::size_t x = 0; x < xn; ++x) {
    for (std::size_t i = 0; i < n; ++i) xs[i] = digit(x, nx, n, i);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t s = 0; s < tuples; ++s) {
      double score = 0.0;
      for (std::size_t i = 0; i < n && score > -std::numeric_limits<double>::infinity(); ++i) {
        const double q = qk[xs[i] * wk + wcells[k - 1][s * n + i]];
        score += q > 0.0 ? std::log(q) : -std::numeric_limits<double>::infinity();
      }
      if (score > best) {
        best = score;
        arg = s;
      }
    }
    code.encoder[x] = static_cast<std::uint32_t>(arg);
  }

  for (std::size_t j = 0; j < k; ++j) {
    SymbolwiseDecoder dec;
    dec.codewords = wcells[j];
    const std::size_t rows = [&] {
      std::size_t r = problem.y_size(j);
      for (std::size_t l = 0; l <= j; ++l) r *= aux.w_sizes[l];
      return r;
    }();
    dec.rule.resize(rows);
    if (const auto* det = std::get_if<DeterministicDecoder>(&aux.decoders[j])) {
      for (std::size_t r = 0; r < rows; ++r) dec.rule[r] = static_cast<std::uint32_t>(det->table[r]);
    } else {
      const auto& c = std::get<ConditionalPmf>(aux.decoders[j]);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto row = c.row(r);
        dec.rule[r] =
            static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      }
    }
    code.decoders.emplace_back(std::move(dec));
  }
  return code;
}

void check_rate_hypothesis(const Code& code, const RateDistortionPoint& point) {
  point.validate(code.k());
  const double n = static_cast<double>(code.n);
  for (std::size_t j = 0; j < code.k(); ++j) {
    const double budget = n * point.encoder_rate(j);
    if (std::log(static_cast<double>(code.M[j])) > budget + 1e-12)
      throw InputError("rate hypothesis violated: log M_" + std::to_string(j + 1) + " = " +
                       std::to_string(std::log(static_cast<double>(code.M[j]))) + " exceeds " +
                       std::to_string(budget));
  }
}

RationalDistortion rationalize(const std::vector<double>& distortion, long long max_denominator) {
  RationalDistortion r;
  for (long long den = 1; den <= max_denominator; ++den) {
    bool ok = true;
    for (double d : distortion) {
      const double v = d * static_cast<double>(den);
      if (std::abs(v - std::round(v)) > 1e-9 * std::max(1.0, std::abs(v))) {
        ok = false;
        break;
      }
    }
    if (ok) {
      r.denominator = den;
      for (double d : distortion) r.units.push_back(std::llround(d * static_cast<double>(den)));
      return r;
    }
  }
  r.denominator = max_denominator;
  r.exact = false;
  for (double d : distortion)
    r.units.push_back(std::llround(d * static_cast<double>(max_denominator)));
  return r;
}

namespace {

struct DpSolver {
  const SourceProblem& problem;
  const Code& code;
  std::size_t j;
  RationalDistortion rd;
  long long threshold;
  std::size_t ny, nxh, nx, n;
  ExplicitDecoder& out;

  struct Member {
    std::size_t x;
    double w;
    long long acc;
  };

  // Value after decisions 1..i; chooses x_hat_{i+1} for every y_{i+1}.
  double solve(std::size_t prefix, std::size_t i, std::size_t hist,
               const std::vector<Member>& members) {
    if (members.empty()) return 0.0;
    if (i == n) {
      double v = 0.0;
      for (const auto& m : members) v += m.w;
      return v;
    }
    std::size_t width = 1;
    for (std::size_t t = 0; t <= i; ++t) width *= ny;
    double total = 0.0;
    std::vector<Member> next;
    for (std::size_t y = 0; y < ny; ++y) {
      double best = -1.0;
      std::size_t arg = 0;
      for (std::size_t xh = 0; xh < nxh; ++xh) {
        next.clear();
        for (const auto& m : members) {
          const std::size_t xi = digit(m.x, nx, n, i);
          const double w = m.w * problem.yj_given_x(j, xi, y);
          const long long acc = m.acc + rd.units[xi * nxh + xh];
          if (w > 0.0 && acc <= threshold) next.push_back({m.x, w, acc});
        }
        if (next.empty()) {
          if (best < 0.0) {
            best = 0.0;
            arg = xh;
          }
          continue;
        }
        const double v = solve(prefix, i + 1, hist * ny + y, next);
        if (v > best) {
          best = v;
          arg = xh;
        }
      }
      // re-solve the chosen branch so deeper tables hold its policy
      next.clear();
      for (const auto& m : members) {
        const std::size_t xi = digit(m.x, nx, n, i);
        const double w = m.w * problem.yj_given_x(j, xi, y);
        const long long acc = m.acc + rd.units[xi * nxh + arg];
        if (w > 0.0 && acc <= threshold) next.push_back({m.x, w, acc});
      }
      if (!next.empty()) solve(prefix, i + 1, hist * ny + y, next);
      out.tables[i][prefix * width + hist * ny + y] = static_cast<std::uint32_t>(arg);
      total += std::max(best, 0.0);
    }
    return total;
  }
};

std::pair<ExplicitDecoder, double> run_dp(const SourceProblem& problem, const Code& code,
                                          std::size_t j, double D, const DpOptions& options) {
  code.validate(problem);
  if (j >= code.k()) throw InputError("user index out of range");
  const std::size_t n = code.n, nx = code.x_size, ny = code.y_sizes[j],
                    nxh = code.xhat_sizes[j];
  // leaves of the decision tree, times source sequences
  // each level searches every reproduction and then replays the chosen one
  const std::size_t leaves = checked_power(ny * (nxh + 1), n, options.budget,
                                           "DP decoder budget exceeded; use symbolwise decoding");
  if (leaves > options.budget / std::max<std::size_t>(code.encoder.size(), 1))
    throw BudgetError("DP decoder budget exceeded; use symbolwise decoding");

  ExplicitDecoder decoder;
  DpSolver solver{problem, code, j, rationalize(problem.distortion_matrix(j)), 0, ny, nxh, nx, n,
                  decoder};
  auto* holder = &decoder;
  const double scaled = static_cast<double>(n) * D * static_cast<double>(solver.rd.denominator);
  solver.threshold = D < 0.0 ? -1 : static_cast<long long>(std::floor(scaled + 1e-9));

  const std::size_t prefixes = code.prefix_messages(j);
  std::size_t width = 1;
  holder->tables.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    width *= ny;
    holder->tables[i].assign(prefixes * width, 0);
  }
  std::vector<std::vector<DpSolver::Member>> groups(prefixes);
  for (std::size_t x = 0; x < code.encoder.size(); ++x) {
    double w = 1.0;
    for (std::size_t i = 0; i < n; ++i) w *= problem.px()[digit(x, nx, n, i)];
    if (w > 0.0) groups[code.message_prefix(code.encoder[x], j)].push_back({x, w, 0});
  }
  std::vector<double> value(prefixes, 0.0);
  parallel_for(
      prefixes, [&](std::size_t s) { value[s] = solver.solve(s, 0, 0, groups[s]); },
      options.threads);
  const double success = std::accumulate(value.begin(), value.end(), 0.0);
  return {std::move(decoder), success};
}

}  // namespace

ExplicitDecoder dp_decoder(const SourceProblem& problem, const Code& code, std::size_t j, double D,
                           const DpOptions& options) {
  return run_dp(problem, code, j, D, options).first;
}

double dp_success(const SourceProblem& problem, const Code& code, std::size_t j, double D,
                  const DpOptions& options) {
  return run_dp(problem, code, j, D, options).second;
}

namespace {

void check_levels(const Code& code, const std::vector<double>& D) {
  if (D.size() != code.k()) throw InputError("need one distortion level per user");
  for (double d : D)
    if (!std::isfinite(d)) throw InputError("distortion levels must be finite");
}

// Per-user success test on an accumulated (unnormalised) distortion.
bool within(double total, double D, std::size_t n) {
  return total <= static_cast<double>(n) * D + 1e-9;
}

}  // namespace

EvaluationReport exact_pc(const SourceProblem& problem, const Code& code,
                          const std::vector<double>& D, std::size_t budget) {
  code.validate(problem);
  check_levels(code, D);
  const std::size_t k = code.k(), n = code.n, nx = code.x_size, nyc = problem.y_cells();
  const char* hint = "exact enumeration budget exceeded; use Monte Carlo mode (--samples)";
  const std::size_t xn = checked_power(nx, n, budget, hint);
  const std::size_t yn = checked_power(nyc, n, budget, hint);
  if (yn > budget / xn) throw BudgetError(hint);

  struct Partial {
    double pc = 0.0;
    std::vector<double> excess, dist;
  };
  std::vector<Partial> parts(xn);
  parallel_for(xn, [&](std::size_t x) {
    Partial& part = parts[x];
    part.excess.assign(k, 0.0);
    part.dist.assign(k, 0.0);
    std::vector<std::size_t> xs(n);
    double px = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = digit(x, nx, n, i);
      px *= problem.px()[xs[i]];
    }
    if (px <= 0.0) return;
    std::vector<std::size_t> prefix(k);
    for (std::size_t j = 0; j < k; ++j) prefix[j] = code.message_prefix(code.encoder[x], j);
    std::vector<std::vector<std::uint32_t>> yh(k, std::vector<std::uint32_t>(n));
    std::vector<std::vector<double>> acc(k, std::vector<double>(n + 1, 0.0));
    std::function<void(std::size_t, double)> dfs = [&](std::size_t i, double p) {
      if (i == n) {
        bool all = true;
        for (std::size_t j = 0; j < k; ++j) {
          part.dist[j] += p * acc[j][n] / static_cast<double>(n);
          if (!within(acc[j][n], D[j], n)) {
            part.excess[j] += p;
            all = false;
          }
        }
        if (all) part.pc += p;
        return;
      }
      for (std::size_t c = 0; c < nyc; ++c) {
        const double q = p * problem.y_given_x(xs[i], c);
        if (q <= 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) {
          yh[j][i] = static_cast<std::uint32_t>(problem.y_component(c, j));
          const std::size_t xh = code.decode(j, prefix[j], yh[j].data(), i);
          acc[j][i + 1] = acc[j][i] + problem.distortion(j, xs[i], xh);
        }
        dfs(i + 1, q);
      }
    };
    dfs(0, px);
  });

  EvaluationReport report;
  report.exact = true;
  report.excess.assign(k, 0.0);
  report.expected_distortion.assign(k, 0.0);
  for (const auto& part : parts) {
    report.pc += part.pc;
    for (std::size_t j = 0; j < k && !part.excess.empty(); ++j) {
      report.excess[j] += part.excess[j];
      report.expected_distortion[j] += part.dist[j];
    }
  }
  // summing p^n over all sequences can overshoot 1 by a few ulps
  report.pc = std::clamp(report.pc, 0.0, 1.0);
  report.ci_low = report.ci_high = report.pc;
  return report;
}

std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials,
                                          double confidence) {
  if (trials == 0) return {0.0, 1.0};
  const double a = 1.0 - confidence;
  const double s = static_cast<double>(successes), t = static_cast<double>(trials);
  const double lo = successes == 0 ? 0.0 : boost::math::ibeta_inv(s, t - s + 1.0, a / 2.0);
  const double hi =
      successes == trials ? 1.0 : boost::math::ibeta_inv(s + 1.0, t - s, 1.0 - a / 2.0);
  return {lo, hi};
}

EvaluationReport mc_pc(const SourceProblem& problem, const Code& code, const std::vector<double>& D,
                       const MonteCarloOptions& options) {
  code.validate(problem);
  check_levels(code, D);
  if (options.samples == 0) throw InputError("samples must be >= 1");
  const std::size_t k = code.k(), n = code.n, nx = code.x_size, nyc = problem.y_cells();
  const std::size_t chunk = std::max<std::size_t>(options.chunk, 1);
  const std::size_t chunks = (options.samples + chunk - 1) / chunk;

  std::vector<double> ycond(nx * nyc);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t c = 0; c < nyc; ++c) ycond[x * nyc + c] = problem.y_given_x(x, c);

  struct Partial {
    std::size_t success = 0;
    std::vector<std::size_t> excess;
    std::vector<double> dist;
  };
  std::vector<Partial> parts(chunks);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        Partial& part = parts[c];
        part.excess.assign(k, 0);
        part.dist.assign(k, 0.0);
        std::mt19937_64 rng(derive_seed(options.seed, c));
        const std::size_t count = std::min(chunk, options.samples - c * chunk);
        std::vector<std::size_t> xs(n);
        std::vector<std::vector<std::uint32_t>> yh(k, std::vector<std::uint32_t>(n));
        std::vector<std::size_t> ycells(n);
        for (std::size_t s = 0; s < count; ++s) {
          std::size_t x = 0;
          for (std::size_t i = 0; i < n; ++i) {
            xs[i] = sample_index(problem.px().values(), uniform01(rng));
            ycells[i] = sample_index(std::span<const double>(ycond).subspan(xs[i] * nyc, nyc),
                                     uniform01(rng));
            x = x * nx + xs[i];
          }
          bool all = true;
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t prefix = code.message_prefix(code.encoder[x], j);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              yh[j][i] = static_cast<std::uint32_t>(problem.y_component(ycells[i], j));
              acc += problem.distortion(j, xs[i], code.decode(j, prefix, yh[j].data(), i));
            }
            part.dist[j] += acc / static_cast<double>(n);
            if (!within(acc, D[j], n)) {
              ++part.excess[j];
              all = false;
            }
          }
          if (all) ++part.success;
        }
      },
      options.threads);

  EvaluationReport report;
  report.exact = false;
  report.samples = options.samples;
  report.excess.assign(k, 0.0);
  report.expected_distortion.assign(k, 0.0);
  std::vector<std::size_t> excess(k, 0);
  for (const auto& part : parts) {
    report.successes += part.success;
    for (std::size_t j = 0; j < k; ++j) {
      excess[j] += part.excess[j];
      report.expected_distortion[j] += part.dist[j];
    }
  }
  const double t = static_cast<double>(options.samples);
  report.pc = static_cast<double>(report.successes) / t;
  for (std::size_t j = 0; j < k; ++j) {
    report.excess[j] = static_cast<double>(excess[j]) / t;
    report.expected_distortion[j] /= t;
  }
  // certain events get a degenerate interval
  bool certain = true, impossible = false;
  for (std::size_t j = 0; j < k; ++j) {
    if (D[j] < problem.max_distortion(j)) certain = false;
    if (D[j] < 0.0) impossible = true;
  }
  if (impossible) {
    report.ci_low = report.ci_high = 0.0;
  } else if (certain) {
    report.ci_low = report.ci_high = 1.0;
  } else {
    std::tie(report.ci_low, report.ci_high) =
        clopper_pearson(report.successes, options.samples, options.confidence);
  }
  return report;
}

void verify_bound(const Code& code, const RateDistortionPoint& point, double F,
                  EvaluationReport& report) {
  check_rate_hypothesis(code, point);
  if (!(F >= 0.0)) throw InputError("exponent must be >= 0");
  const double c = 2.0 * static_cast<double>(code.k()) + 3.0;
  report.bound = c * std::exp(-static_cast<double>(code.n) * F);
  const double observed = report.exact ? report.pc : report.ci_high;
  report.bound_satisfied = observed <= report.bound + 1e-9;
}

std::vector<bool> distortion_criteria_check(const SourceProblem& problem,
                                            const EvaluationReport& report,
                                            const std::vector<double>& D) {
  if (!report.exact) throw InputError("the distortion criteria check needs an exact report");
  if (D.size() != problem.k()) throw InputError("need one distortion level per user");
  std::vector<bool> ok(problem.k());
  for (std::size_t j = 0; j < problem.k(); ++j)
    ok[j] = report.expected_distortion[j] <=
            D[j] + problem.max_distortion(j) * report.excess[j] + 1e-12;
  return ok;
}

}  // namespace csr
