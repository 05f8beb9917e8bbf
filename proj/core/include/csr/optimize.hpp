#pragma once

// Numerical optimisation helpers shared by the region and exponent code.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace csr {

/// Objective with optional gradient: fills `grad` when it is non-empty.
/// Returning a non-finite value marks the point as infeasible.
using SmoothObjective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
  int max_iterations = 20000;
  double function_tolerance = 1e-13;
  double gradient_tolerance = 1e-11;
  double parameter_tolerance = 1e-13;
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

LbfgsResult minimize_lbfgs(const SmoothObjective& f, std::vector<double> x0,
                           const LbfgsOptions& options = {});

using SimplexObjective = std::function<double(std::span<const double> q)>;

struct PatternSearchOptions {
  double initial_step = 0.05;
  double min_step = 1e-9;
  std::size_t max_evaluations = 2'000'000;
  /// Move mass between every ordered pair of cells; otherwise only between
  /// each cell and the currently heaviest one.
  bool all_pairs = true;
};

struct PatternSearchResult {
  std::vector<double> q;
  double value = 0.0;
  std::size_t evaluations = 0;
  bool budget_exhausted = false;
};

/// Compass search on the probability simplex: moves of size h transfer mass
/// between two cells, h halves when no move improves.
PatternSearchResult simplex_pattern_search(const SimplexObjective& f, std::vector<double> start,
                                           const PatternSearchOptions& options = {});

/// Number of points {m_i / resolution : sum m_i = resolution} of the simplex
/// with `cells` coordinates (saturates at SIZE_MAX).
std::size_t simplex_lattice_size(std::size_t cells, std::size_t resolution);

/// Calls `visit` with every lattice point in lexicographic order.
void for_each_simplex_lattice_point(std::size_t cells, std::size_t resolution,
                                    const std::function<void(std::span<const double>)>& visit);

/// splitmix64 mix of a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Callers write results into per-index slots so the outcome is
/// independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads = 0);

}  // namespace csr
