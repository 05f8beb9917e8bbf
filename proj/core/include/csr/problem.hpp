#pragma once

// The k-user problem instance, query points, dual parameters and auxiliary
// systems. Rates are cumulative sum rates in nats per source symbol: R_j is
// the total rate of the first j encoders.

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "csr/probability.hpp"

namespace csr {

std::string x_axis_name();
std::string y_axis_name(std::size_t j);     // 0-based user index -> "Y1", ...
std::string w_axis_name(std::size_t j);     // "W1", ...
std::string xhat_axis_name(std::size_t j);  // "Xhat1", ...

class SourceProblem {
 public:
  /// `joint` must have axes (X, Y1, ..., Yk); `distortion[j]` is a row-major
  /// |X| x |Xhat_j| matrix.
  SourceProblem(JointPmf joint, std::vector<std::size_t> xhat_sizes,
                std::vector<std::vector<double>> distortion);

  std::size_t k() const { return xhat_sizes_.size(); }
  std::size_t x_size() const { return joint_.axes()[0].size; }
  std::size_t y_size(std::size_t j) const { return joint_.axes()[1 + j].size; }
  std::size_t xhat_size(std::size_t j) const { return xhat_sizes_[j]; }
  /// Number of joint side-information cells prod_j |Y_j|.
  std::size_t y_cells() const { return y_cells_; }

  const JointPmf& joint() const { return joint_; }
  const Pmf& px() const { return px_; }
  /// P(y^k | x), row-major [x][y-cell].
  double y_given_x(std::size_t x, std::size_t y_cell) const {
    return y_given_x_[x * y_cells_ + y_cell];
  }
  /// P(y_j | x), row-major [x][y_j].
  double yj_given_x(std::size_t j, std::size_t x, std::size_t yj) const {
    return yj_given_x_[j][x * y_size(j) + yj];
  }
  /// Component j of a flattened side-information cell.
  std::size_t y_component(std::size_t y_cell, std::size_t j) const {
    return (y_cell / y_strides_[j]) % y_size(j);
  }

  double distortion(std::size_t j, std::size_t x, std::size_t xhat) const {
    return distortion_[j][x * xhat_sizes_[j] + xhat];
  }
  const std::vector<double>& distortion_matrix(std::size_t j) const { return distortion_[j]; }
  /// Largest entry of d_j.
  double max_distortion(std::size_t j) const { return max_distortion_[j]; }

 private:
  JointPmf joint_;
  std::vector<std::size_t> xhat_sizes_;
  std::vector<std::vector<double>> distortion_;
  std::vector<double> max_distortion_;
  Pmf px_;
  std::size_t y_cells_ = 1;
  std::vector<std::size_t> y_strides_;
  std::vector<double> y_given_x_;
  std::vector<std::vector<double>> yj_given_x_;
};

/// Parses the problem-file schema:
///   { "k": 1, "alphabets": {"x": 2, "y": [2], "xhat": [2]},
///     "joint": [[...]], "distortion": [[[...]]] }
/// Alphabet entries may be sizes or label arrays.
SourceProblem load_problem(std::string_view document);
SourceProblem load_problem_file(const std::string& path);
nlohmann::json problem_to_json(const SourceProblem& problem);

struct RateDistortionPoint {
  std::vector<double> rates;        // cumulative, nats per symbol
  std::vector<double> distortions;

  /// Throws InputError unless the point is well formed for `k` users.
  void validate(std::size_t k) const;
  /// Builds a point from per-encoder (incremental) rates.
  static RateDistortionPoint from_incremental(const std::vector<double>& increments,
                                              std::vector<double> distortions);
  /// R_j - sum_{l<j} R_l, the rate budget of encoder j.
  double encoder_rate(std::size_t j) const;
};

/// Weights (alpha^k, beta^k) with sum_j (alpha_j + beta_j) = 1.
struct Weights {
  std::vector<double> alpha;
  std::vector<double> beta;

  void validate(std::size_t k) const;
  double alpha_max() const;
  std::size_t k() const { return alpha.size(); }
};

/// Dual variables of the exponent: theta > 0, mu > 0 and the weights.
struct ParameterTuple {
  double theta = 0.0;
  double mu = 0.0;
  Weights weights;

  void validate(std::size_t k) const;
};

/// Dual variables of the lower-bound family: lambda >= 0 and the weights.
struct TildeParameters {
  double lambda = 0.0;
  Weights weights;

  void validate(std::size_t k) const;
};

/// alpha_1 R_1 + beta_1 D_1 + sum_{j>=2} (alpha_j (R_j - sum_{l<j} R_l) + beta_j D_j).
double kappa(const RateDistortionPoint& point, const Weights& weights);

/// Index layout of T = (X, Y^k, W^k, Xhat^k), row-major in that order.
class TLayout {
 public:
  TLayout(const SourceProblem& problem, std::vector<std::size_t> w_sizes);

  std::size_t k() const { return k_; }
  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  const std::vector<std::size_t>& w_sizes() const { return w_sizes_; }
  std::size_t cells() const { return cells_; }

  std::size_t x_axis() const { return 0; }
  std::size_t y_axis(std::size_t j) const { return 1 + j; }
  std::size_t w_axis(std::size_t j) const { return 1 + k_ + j; }
  std::size_t xhat_axis(std::size_t j) const { return 1 + 2 * k_ + j; }

  std::vector<Axis> axes() const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  std::size_t flatten(const std::vector<std::size_t>& idx) const;

 private:
  std::size_t k_;
  std::vector<std::size_t> w_sizes_;
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> strides_;
  std::size_t cells_ = 1;
};

enum class CapScheme {
  kPStar,  // |W_1| <= |X|+3, |W_j| <= |X| prod_{l<j}|W_l| + 1
  kP,      // |W_j| <= |X| prod_{l<j}|W_l| + 1 for all j
  kShell,  // |W_j| <= |X|^j
  kFree,   // |W_j| <= (product of all alphabet sizes)^j
};

std::vector<std::size_t> cardinality_caps(const SourceProblem& problem, CapScheme scheme);

/// Deterministic decoder table: entry [wcell * |Y_j| + y_j] is the
/// reproduction symbol, with wcell the flattened (W_1, ..., W_j) cell.
struct DeterministicDecoder {
  std::vector<std::size_t> table;
};

using Decoder = std::variant<DeterministicDecoder, ConditionalPmf>;

/// Test-channel chain Q_{W_1|X}, Q_{W_2|X W_1}, ... and per-user decoders
/// reading (W^j, Y_j). Channel j is a ConditionalPmf with given axes
/// (X, W_1, ..., W_{j-1}) and target W_j; a stochastic decoder has given axes
/// (W_1, ..., W_j, Y_j) and target Xhat_j.
struct AuxiliarySystem {
  std::vector<std::size_t> w_sizes;
  std::vector<ConditionalPmf> channels;
  std::vector<Decoder> decoders;

  void validate(const SourceProblem& problem) const;
};

/// Expands a deterministic decoder into a 0/1 conditional.
ConditionalPmf decoder_as_conditional(const SourceProblem& problem,
                                      const std::vector<std::size_t>& w_sizes, std::size_t j,
                                      const Decoder& decoder);

/// Q_T = P_{XY^k} Q_{W^k|X} prod_j Q_{Xhat_j | W^j Y_j}.
JointPmf induce_joint(const SourceProblem& problem, const AuxiliarySystem& aux);

/// A joint over T with no structure beyond the W cardinalities.
struct FreeJoint {
  std::vector<std::size_t> w_sizes;
  JointPmf joint;
};

/// Wraps a JointPmf whose axes must be exactly the T layout of `problem`.
FreeJoint make_free_joint(const SourceProblem& problem, JointPmf joint);

}  // namespace csr
