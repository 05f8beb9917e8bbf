#pragma once

// Concrete block codes with causal decoders, and their non-excess-distortion
// probabilities by exhaustive enumeration or Monte Carlo sampling.

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "csr/problem.hpp"

namespace csr {

/// x_hat_{j,i} = rule[w_cell * |Y_j| + y_{j,i}], where w_cell is the
/// (W_1, ..., W_j) cell carried by the codewords of s^j at time i.
struct SymbolwiseDecoder {
  std::vector<std::uint32_t> codewords;  // [s^j * n + i] -> w^j cell
  std::vector<std::uint32_t> rule;
};

/// Time-indexed tables: tables[i][s^j * |Y_j|^{i+1} + y_{j,1..i+1}] with the
/// side-information history read as a base-|Y_j| number, y_{j,1} leading.
struct ExplicitDecoder {
  std::vector<std::vector<std::uint32_t>> tables;
};

using CodeDecoder = std::variant<SymbolwiseDecoder, ExplicitDecoder>;

struct Code {
  std::size_t n = 0;
  /// Message-set sizes M_1, ..., M_k.
  std::vector<std::size_t> M;
  std::size_t x_size = 0;
  std::vector<std::size_t> y_sizes;
  std::vector<std::size_t> xhat_sizes;
  /// [x^n] -> flattened message tuple (s_1, ..., s_k); x_1 leads.
  std::vector<std::uint32_t> encoder;
  std::vector<CodeDecoder> decoders;
  std::uint64_t seed = 0;
  std::string problem_hash;
  std::string aux_hash;

  std::size_t k() const { return M.size(); }
  /// Number of message prefixes (s_1, ..., s_j) for user j (0-based).
  std::size_t prefix_messages(std::size_t j) const;
  /// Message prefix of user j from a full message tuple.
  std::size_t message_prefix(std::size_t full, std::size_t j) const;
  /// Reproduction at time i (0-based) from s^j and y_{j,1..i+1}.
  std::size_t decode(std::size_t j, std::size_t prefix, const std::uint32_t* y_history,
                     std::size_t i) const;
  /// Whole reproduction sequence for user j.
  std::vector<std::size_t> decode_sequence(std::size_t j, std::size_t prefix,
                                           const std::vector<std::uint32_t>& y) const;
  void validate(const SourceProblem& problem) const;
};

/// Random codebooks drawn from the chained test channels; the encoder picks
/// the message tuple of largest joint likelihood (ties to the lowest index).
/// A stage with M_j = |W_j|^n uses every sequence as a codeword.
Code random_code(const SourceProblem& problem, const AuxiliarySystem& aux, std::size_t n,
                 const std::vector<std::size_t>& M, std::uint64_t seed);

/// Checks log M_1 <= n R_1 and log M_j <= n (encoder rate j). Throws InputError.
void check_rate_hypothesis(const Code& code, const RateDistortionPoint& point);

struct DpOptions {
  /// Largest number of decision-tree leaves times source sequences.
  std::size_t budget = std::size_t{1} << 27;
  unsigned threads = 0;
};

/// Distortions scaled to integers: d_j(x, xhat) = units[x * |Xhat| + xhat] / denominator.
struct RationalDistortion {
  std::vector<long long> units;
  long long denominator = 1;
  bool exact = true;
};
RationalDistortion rationalize(const std::vector<double>& distortion, long long max_denominator = 64);

/// Optimal causal decoder of user j for the code's encoder, maximising
/// P(d_j(X^n, Xhat_j^n) <= D_j). Throws BudgetError when the policy tree is too large.
ExplicitDecoder dp_decoder(const SourceProblem& problem, const Code& code, std::size_t j, double D,
                           const DpOptions& options = {});

/// Success probability of user j's own DP policy (computed alongside the tables).
double dp_success(const SourceProblem& problem, const Code& code, std::size_t j, double D,
                  const DpOptions& options = {});

struct EvaluationReport {
  bool exact = true;
  double pc = 0.0;
  std::vector<double> excess;               // per-user P(d_j > D_j)
  std::vector<double> expected_distortion;  // per-user E[d_j(X^n, Xhat_j^n)]
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t samples = 0;
  std::size_t successes = 0;
  double bound = 0.0;
  bool bound_satisfied = true;
};

/// Full enumeration of (x^n, y^n). Throws BudgetError above `budget` sequences.
EvaluationReport exact_pc(const SourceProblem& problem, const Code& code,
                          const std::vector<double>& D, std::size_t budget = std::size_t{1} << 24);

struct MonteCarloOptions {
  std::size_t samples = 1000000;
  std::uint64_t seed = 1;
  double confidence = 0.95;
  std::size_t chunk = 1u << 16;
  unsigned threads = 0;
};

EvaluationReport mc_pc(const SourceProblem& problem, const Code& code, const std::vector<double>& D,
                       const MonteCarloOptions& options = {});

/// Exact two-sided Clopper-Pearson interval for `successes` out of `trials`.
std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials,
                                          double confidence);

/// Fills bound = (2k+3) exp(-n F) and bound_satisfied (upper interval
/// endpoint in Monte Carlo mode, 1e-9 slack). Checks the rate hypothesis.
void verify_bound(const Code& code, const RateDistortionPoint& point, double F,
                  EvaluationReport& report);

/// E[d_j] <= D_j + max d_j * P(d_j > D_j) for each user, from an exact report.
std::vector<bool> distortion_criteria_check(const SourceProblem& problem,
                                            const EvaluationReport& report,
                                            const std::vector<double>& D);

// --- export / import ---

/// FNV-1a 64 of the canonical problem document, as 16 hex digits.
std::string problem_hash(const SourceProblem& problem);
std::string aux_hash(const AuxiliarySystem& aux);
std::string fnv1a_hex(std::string_view bytes);

nlohmann::json aux_to_json(const AuxiliarySystem& aux);
AuxiliarySystem aux_from_json(const SourceProblem& problem, const nlohmann::json& doc);

nlohmann::json code_to_json(const Code& code);
Code code_from_json(const nlohmann::json& doc);

}  // namespace csr
