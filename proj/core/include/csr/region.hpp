#pragma once

// Rate-distortion region through supporting hyperplanes: for weights
// (alpha, beta) the region lies above
//   R(alpha, beta) = min over the shell family of
//     alpha_1 I(X;W_1) + sum_{j>=2} alpha_j I(X;W_j|W^{j-1}) + sum_j beta_j E d_j,
// and a point is inside iff kappa(point) >= R(alpha, beta) for every weight.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "csr/optimize.hpp"
#include "csr/problem.hpp"

namespace csr {

enum class SolverStatus { kConverged, kGridCertified, kMultistartBest };
const char* to_string(SolverStatus status);

struct RegionOptions {
  CapScheme caps = CapScheme::kPStar;
  /// Explicit W cardinalities; overrides `caps` when non-empty.
  std::vector<std::size_t> w_sizes;
  std::size_t multistarts = 16;
  std::uint64_t seed = 1;
  /// Channel-row lattice resolution for the exhaustive mode (0 = off).
  std::size_t grid_resolution = 0;
  /// Largest number of lattice points the exhaustive mode may visit.
  std::size_t grid_budget = 1u << 20;
  LbfgsOptions lbfgs;
  unsigned threads = 0;
};

std::vector<std::size_t> region_w_sizes(const SourceProblem& problem, const RegionOptions& options);

/// Number of maps (W^j, Y_j) -> Xhat_j (saturating).
std::size_t decoder_count(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes,
                          std::size_t j);

/// Visits every deterministic decoder for user j exactly once. Throws
/// BudgetError when there are more than `budget` of them.
void enumerate_decoders(const SourceProblem& problem, const std::vector<std::size_t>& w_sizes,
                        std::size_t j, std::size_t budget,
                        const std::function<void(const DeterministicDecoder&)>& visit);

/// Objective alpha.I + beta.E[d] of a concrete auxiliary system.
double hyperplane_objective(const SourceProblem& problem, const Weights& weights,
                            const AuxiliarySystem& aux);

/// For a fixed channel chain, the decoders minimising expected distortion,
/// chosen per (w^j, y_j) cell with ties to the lowest symbol.
std::vector<Decoder> best_decoders(const SourceProblem& problem,
                                   const std::vector<std::size_t>& w_sizes,
                                   const std::vector<ConditionalPmf>& channels);

struct HyperplaneValue {
  Weights weights;
  double value = 0.0;
  AuxiliarySystem argmin;
  SolverStatus status = SolverStatus::kMultistartBest;
  bool warning = false;
};

HyperplaneValue hyperplane_value(const SourceProblem& problem, const Weights& weights,
                                 const RegionOptions& options = {});

/// Memoises hyperplane values by weight vector. Safe for concurrent use.
class HyperplaneCache {
 public:
  HyperplaneCache(const SourceProblem& problem, RegionOptions options);
  const HyperplaneValue& get(const Weights& weights);
  std::size_t size() const;

 private:
  const SourceProblem& problem_;
  RegionOptions options_;
  mutable std::mutex mutex_;
  std::map<std::vector<long long>, HyperplaneValue> values_;
};

enum class Verdict { kInside, kOutside, kBoundary };
const char* to_string(Verdict verdict);

struct MembershipOptions {
  /// Grid divisions per unit along each weight coordinate (step 1/grid).
  std::size_t grid = 8;
  std::size_t refinements = 2;
  double boundary_band = 1e-3;
  RegionOptions region;
};

struct MembershipReport {
  RateDistortionPoint point;
  Verdict verdict = Verdict::kBoundary;
  double margin = 0.0;
  Weights witness;
  double witness_value = 0.0;
  std::size_t nodes = 0;
  bool solver_warning = false;
};

/// All weight vectors {m / grid} with 2k coordinates summing to 1, in
/// lexicographic order of (alpha_1, beta_1, alpha_2, beta_2, ...).
std::vector<Weights> weight_grid(std::size_t k, std::size_t grid);

MembershipReport membership(const SourceProblem& problem, const RateDistortionPoint& point,
                            const MembershipOptions& options = {},
                            HyperplaneCache* cache = nullptr);

struct BlahutArimotoOptions {
  double tolerance = 1e-9;
  std::size_t max_iterations = 200000;
};

/// Classical rate-distortion function R(D) in nats by Blahut-Arimoto with a
/// bisection on the Lagrange slope. `distortion` is row-major |X| x |Xhat|.
double ba_reference(const Pmf& px, const std::vector<double>& distortion, std::size_t xhat_size,
                    double D, const BlahutArimotoOptions& options = {});

/// Smallest R with a non-negative membership margin at distortion D (k = 1),
/// by bisection on [0, log|X|].
double boundary_rate(const SourceProblem& problem, double D, const MembershipOptions& options,
                     HyperplaneCache& cache, double tolerance = 1e-6);

}  // namespace csr
