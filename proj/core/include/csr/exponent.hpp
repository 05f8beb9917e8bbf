#pragma once

// Strong converse exponent F and the lower-bound family F-tilde.
//
// For Q over T the per-cell log-likelihood combination omega(t) is written as
// sum_m c_m log Q_{S_m}(t) plus a P-side offset, so Omega(Q) is a minus
// cumulant generating function of a LogMarginalForm.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "csr/optimize.hpp"
#include "csr/problem.hpp"
#include "csr/region.hpp"

namespace csr {

/// Per-cell omega over the T layout: NaN on cells with q(t) = 0.
/// Throws NumericalDomainError when q puts mass where P_{XY} is zero.
std::vector<double> omega_values(const SourceProblem& problem, const FreeJoint& q, double mu,
                                 const Weights& weights);

double omega_cell(const SourceProblem& problem, const FreeJoint& q, double mu,
                  const Weights& weights, const std::vector<std::size_t>& t);

struct OmegaEvaluation {
  FreeJoint q;
  ParameterTuple params;
  std::vector<double> omega;
  double value = 0.0;
};

/// Omega(Q) = -log E_Q exp(-theta omega). theta >= 0, mu >= 0.
OmegaEvaluation big_omega(const SourceProblem& problem, const FreeJoint& q,
                          const ParameterTuple& params);

/// E_Q[omega].
double expected_omega(const SourceProblem& problem, const FreeJoint& q, double mu,
                      const Weights& weights);

struct InnerOptions {
  /// Explicit W cardinalities; overrides `caps` when non-empty.
  std::vector<std::size_t> w_sizes;
  CapScheme caps = CapScheme::kShell;
  std::size_t multistarts = 4;
  std::uint64_t seed = 1;
  LbfgsOptions lbfgs;
  /// Also run the lattice + pattern-search oracle (only when |T| <= 4096).
  bool oracle = false;
  std::size_t oracle_lattice_budget = 60000;
  std::size_t oracle_restarts = 3;
  PatternSearchOptions pattern;
  /// Additional starting joints over T (used as seeds and evaluated as is).
  std::vector<JointPmf> seeds;
};

std::vector<std::size_t> exponent_w_sizes(const SourceProblem& problem,
                                          const InnerOptions& options);

struct InnerResult {
  FreeJoint q;
  double value = 0.0;
  SolverStatus status = SolverStatus::kMultistartBest;
  bool warning = false;
  double descent_value = std::numeric_limits<double>::quiet_NaN();
  double oracle_value = std::numeric_limits<double>::quiet_NaN();
};

/// Approximates min over Q of Omega(Q) by multistart L-BFGS on softmax logits.
InnerResult min_big_omega(const SourceProblem& problem, const ParameterTuple& params,
                          const InnerOptions& options = {});

/// Gradient-free oracle: best point of a uniform simplex lattice refined by
/// compass search with mass-transfer moves.
InnerResult grid_oracle_min_big_omega(const SourceProblem& problem, const ParameterTuple& params,
                                      const InnerOptions& options = {});

/// 1 + (2k+2) theta + 2 theta mu sum_j alpha_j.
double f_denominator(std::size_t k, double theta, double mu, const Weights& weights);
/// 2k+3 + lambda alpha_max + lambda (2k+3) sum_{j>=2} alpha_j + 2 lambda sum_l alpha_l.
double tilde_denominator(std::size_t k, double lambda, const Weights& weights);

/// Per-cell omega-tilde of a joint over T (NaN where p(t) = 0).
std::vector<double> tilde_omega_values(const SourceProblem& problem, const JointPmf& p,
                                       const Weights& weights);
double tilde_omega_cell(const SourceProblem& problem, const JointPmf& p, const Weights& weights,
                        const std::vector<std::size_t>& t);
/// -log E_p exp(-lambda omega-tilde).
double big_tilde_omega(const SourceProblem& problem, const JointPmf& p, double lambda,
                       const Weights& weights);
JointPmf tilted_distribution(const SourceProblem& problem, const JointPmf& p, double lambda,
                             const Weights& weights);
/// Variance of omega-tilde under the lambda-tilted distribution.
double tilted_variance(const SourceProblem& problem, const JointPmf& p, double lambda,
                       const Weights& weights);

/// Shell member sharing Q's W|X chain and the decoders Q(Xhat_j | Y_j, W^j).
JointPmf project_to_shell(const SourceProblem& problem, const FreeJoint& q);

struct TildeInnerResult {
  AuxiliarySystem argmin;
  JointPmf p;
  double value = 0.0;
};

/// Approximates min over the shell family of Omega-tilde: multistart L-BFGS
/// over the channels alternating with coordinate ascent over the decoders.
TildeInnerResult min_big_tilde_omega(const SourceProblem& problem, const TildeParameters& params,
                                     const InnerOptions& options = {},
                                     const std::vector<AuxiliarySystem>& seeds = {});

/// min(delta, rho)^2 / (2 (2k+9) rho); zero when rho = 0. Throws InputError
/// unless delta > 0.
double certificate_value(double delta, double rho, std::size_t k);

struct ExponentOptions {
  InnerOptions inner;
  /// Weight grid divisions and refinement rounds around the running argmax.
  std::size_t weight_grid = 8;
  std::size_t refinements = 2;
  /// mu: log-spaced in [mu_min, mu_max].
  std::size_t mu_points = 30;
  double mu_min = 0.02;
  double mu_max = 50.0;
  /// theta: log-spaced in [theta_ratio * theta_edge, theta_edge] with
  /// theta_edge = min(theta_max, 1 / (1 + mu alpha_max)).
  std::size_t theta_points = 40;
  double theta_ratio = 1e-3;
  double theta_max = 20.0;
  /// lambda for the tilde family: log-spaced in [lambda_min, min(lambda_max, 1/alpha_max)].
  std::size_t lambda_points = 12;
  double lambda_min = 1e-2;
  double lambda_max = 50.0;
  /// Tilts used when estimating rho.
  std::size_t rho_lambda_points = 5;
  MembershipOptions membership;
  unsigned threads = 0;
};

struct ExponentResult {
  RateDistortionPoint point;
  double F = 0.0;
  ParameterTuple argsup;
  FreeJoint argmin;
  bool argsup_at_mu_limit = false;
  double tilde_F = 0.0;
  TildeParameters tilde_argsup;
  double rho = 0.0;
  bool rho_is_lower_bound = true;
  double margin = 0.0;
  Verdict verdict = Verdict::kBoundary;
  double certificate = 0.0;
  std::size_t f_nodes = 0;
  std::size_t tilde_nodes = 0;
  std::size_t solver_warnings = 0;
};

/// F alone (parameter sweep of min Omega).
ExponentResult exponent_F(const SourceProblem& problem, const RateDistortionPoint& point,
                          const ExponentOptions& options = {});

/// F, F-tilde, rho, the region margin and the certificate from one joint sweep.
ExponentResult evaluate_exponents(const SourceProblem& problem, const RateDistortionPoint& point,
                                  const ExponentOptions& options = {});

struct DispersionResult {
  double rho = 0.0;
  bool lower_bound = true;
};

/// Best-found dispersion over shell members and weights with lambda in [0, 1].
DispersionResult dispersion_rho(const SourceProblem& problem, const ExponentOptions& options = {});

}  // namespace csr
