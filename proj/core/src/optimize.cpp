#include "csr/optimize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <glog/logging.h>

namespace csr {
namespace {

class CeresAdapter final : public ceres::FirstOrderFunction {
 public:
  CeresAdapter(const SmoothObjective& f, int n) : f_(f), n_(n) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    std::span<const double> x(parameters, static_cast<std::size_t>(n_));
    std::span<double> g;
    if (gradient != nullptr) g = std::span<double>(gradient, static_cast<std::size_t>(n_));
    const double v = f_(x, g);
    if (!std::isfinite(v)) return false;
    for (double gi : g)
      if (!std::isfinite(gi)) return false;
    *cost = v;
    return true;
  }
  int NumParameters() const override { return n_; }

 private:
  const SmoothObjective& f_;
  int n_;
};

}  // namespace

LbfgsResult minimize_lbfgs(const SmoothObjective& f, std::vector<double> x0,
                           const LbfgsOptions& options) {
  // line-search diagnostics from the solver are noise for callers
  static std::once_flag quiet;
  std::call_once(quiet, [] { FLAGS_minloglevel = google::GLOG_ERROR; });
  LbfgsResult result;
  if (x0.empty()) {
    result.value = f(x0, {});
    result.converged = true;
    result.x = std::move(x0);
    return result;
  }
  ceres::GradientProblem problem(new CeresAdapter(f, static_cast<int>(x0.size())));
  ceres::GradientProblemSolver::Options opts;
  opts.line_search_direction_type = ceres::LBFGS;
  opts.max_num_iterations = options.max_iterations;
  opts.function_tolerance = options.function_tolerance;
  opts.gradient_tolerance = options.gradient_tolerance;
  opts.parameter_tolerance = options.parameter_tolerance;
  opts.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(opts, problem, x0.data(), &summary);
  result.x = std::move(x0);
  result.value = f(result.x, {});
  result.converged = summary.termination_type == ceres::CONVERGENCE;
  result.iterations = static_cast<int>(summary.iterations.size());
  return result;
}

PatternSearchResult simplex_pattern_search(const SimplexObjective& f, std::vector<double> start,
                                           const PatternSearchOptions& options) {
  PatternSearchResult r;
  r.q = std::move(start);
  r.value = f(r.q);
  r.evaluations = 1;
  const std::size_t n = r.q.size();
  if (n < 2) return r;
  std::vector<double> trial(r.q);
  double h = options.initial_step;
  while (h >= options.min_step) {
    bool improved = false;
    for (std::size_t a = 0; a < n; ++a) {
      std::size_t b_begin = 0;
      std::size_t b_end = n;
      if (!options.all_pairs) {
        const auto heaviest = static_cast<std::size_t>(
            std::max_element(r.q.begin(), r.q.end()) - r.q.begin());
        if (heaviest == a) continue;
        b_begin = heaviest;
        b_end = heaviest + 1;
      }
      for (std::size_t b = b_begin; b < b_end; ++b) {
        if (a == b) continue;
        // two directions: a gains from b, b gains from a
        for (int dir = 0; dir < 2; ++dir) {
          const std::size_t to = dir == 0 ? a : b;
          const std::size_t from = dir == 0 ? b : a;
          if (r.q[from] <= 0.0) continue;
          const double step = std::min(h, r.q[from]);
          trial = r.q;
          trial[to] += step;
          trial[from] -= step;
          const double v = f(trial);
          ++r.evaluations;
          if (v < r.value) {
            r.value = v;
            r.q.swap(trial);
            improved = true;
          }
          if (r.evaluations >= options.max_evaluations) {
            r.budget_exhausted = true;
            return r;
          }
        }
      }
    }
    if (!improved) h *= 0.5;
  }
  return r;
}

std::size_t simplex_lattice_size(std::size_t cells, std::size_t resolution) {
  // C(resolution + cells - 1, cells - 1)
  if (cells == 0) return 0;
  const std::size_t kMax = std::numeric_limits<std::size_t>::max();
  const std::size_t r = std::min(cells - 1, resolution);
  const std::size_t top = resolution + cells - 1;
  long double c = 1.0L;
  for (std::size_t i = 1; i <= r; ++i) c = c * static_cast<long double>(top - r + i) / i;
  if (c >= static_cast<long double>(kMax)) return kMax;
  return static_cast<std::size_t>(std::llround(c));
}

void for_each_simplex_lattice_point(std::size_t cells, std::size_t resolution,
                                    const std::function<void(std::span<const double>)>& visit) {
  if (cells == 0) return;
  std::vector<std::size_t> m(cells, 0);
  std::vector<double> q(cells, 0.0);
  const double inv = 1.0 / static_cast<double>(resolution);
  // recursive composition enumeration, first coordinate varies slowest
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t left) {
    if (pos + 1 == cells) {
      m[pos] = left;
      for (std::size_t i = 0; i < cells; ++i) q[i] = static_cast<double>(m[i]) * inv;
      visit(q);
      return;
    }
    for (std::size_t v = 0; v <= left; ++v) {
      m[pos] = v;
      rec(pos + 1, left - v);
    }
  };
  rec(0, resolution);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace csr
