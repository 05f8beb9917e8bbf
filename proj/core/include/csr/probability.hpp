#pragma once

// Finite-alphabet probability primitives. Everything is in nats.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csr {

inline constexpr double kSumTolerance = 1e-12;

struct Axis {
  std::string name;
  std::size_t size = 0;

  friend bool operator==(const Axis&, const Axis&) = default;
};

using AxisSet = std::vector<std::string>;

class Pmf {
 public:
  Pmf() = default;
  /// Throws InputError on negative entries or a sum away from 1.
  explicit Pmf(std::vector<double> values);

  static Pmf uniform(std::size_t n);
  static Pmf point_mass(std::size_t n, std::size_t at);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<double> values_;
};

/// Dense joint pmf over named axes, row-major in axis order.
class JointPmf {
 public:
  JointPmf() = default;
  JointPmf(std::vector<Axis> axes, std::vector<double> values);

  const std::vector<Axis>& axes() const { return axes_; }
  std::size_t rank() const { return axes_.size(); }
  std::size_t size() const { return values_.size(); }
  std::vector<std::size_t> dims() const;
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t flat) const { return values_[flat]; }

  /// Position of a named axis; InputError if absent.
  std::size_t axis_index(std::string_view name) const;
  bool has_axis(std::string_view name) const;

  std::size_t flat_index(std::span<const std::size_t> index) const;
  std::size_t flat_index(std::initializer_list<std::size_t> index) const {
    return flat_index(std::span<const std::size_t>(index.begin(), index.size()));
  }
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  double at(std::initializer_list<std::size_t> index) const { return values_[flat_index(index)]; }

 private:
  std::vector<Axis> axes_;
  std::vector<std::size_t> strides_;
  std::vector<double> values_;
};

/// P(target | given). Rows are indexed by the flattened given cell, columns by
/// the flattened target cell. Rows whose conditioning event has zero mass are
/// flagged undefined and hold zeros.
class ConditionalPmf {
 public:
  ConditionalPmf() = default;
  ConditionalPmf(std::vector<Axis> given, std::vector<Axis> target, std::vector<double> values,
                 std::vector<bool> defined);

  /// Builds a fully defined conditional; each row must be a valid pmf.
  static ConditionalPmf from_rows(std::vector<Axis> given, std::vector<Axis> target,
                                  std::vector<double> values);

  const std::vector<Axis>& given() const { return given_; }
  const std::vector<Axis>& target() const { return target_; }
  std::size_t given_cells() const { return given_cells_; }
  std::size_t target_cells() const { return target_cells_; }
  double operator()(std::size_t given_cell, std::size_t target_cell) const {
    return values_[given_cell * target_cells_ + target_cell];
  }
  bool defined(std::size_t given_cell) const { return defined_[given_cell]; }
  std::span<const double> row(std::size_t given_cell) const {
    return std::span<const double>(values_).subspan(given_cell * target_cells_, target_cells_);
  }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<Axis> given_;
  std::vector<Axis> target_;
  std::size_t given_cells_ = 0;
  std::size_t target_cells_ = 0;
  std::vector<double> values_;
  std::vector<bool> defined_;
};

/// Sums out every axis not in `keep`. Kept axes retain their original order.
JointPmf marginalize(const JointPmf& joint, const AxisSet& keep);

/// Conditions on `given` (a strict subset of the axes); the target axes are
/// the remaining ones in their original order.
ConditionalPmf condition(const JointPmf& joint, const AxisSet& given);

/// Multiplies a marginal over the given axes back with a conditional.
JointPmf multiply(const JointPmf& marginal, const ConditionalPmf& conditional);

double entropy(const Pmf& p);

/// I(P_X, P_{Y|X}) in nats. The channel's given side must have px.size() cells.
double mutual_information(const Pmf& px, const ConditionalPmf& channel);

/// I(A;B|G) in nats; zero-mass conditioning cells contribute nothing.
double conditional_mutual_information(const JointPmf& joint, const AxisSet& a, const AxisSet& b,
                                      const AxisSet& given);

/// Exponential normalisation onto the open simplex.
Pmf simplex_embed(std::span<const double> free_params);

struct SimplexProjection {
  Pmf pmf;
  bool degenerate = false;
};

/// Euclidean projection onto the probability simplex. An all-zero input has
/// no preferred direction; it maps to the uniform pmf with `degenerate` set.
SimplexProjection simplex_project(std::span<const double> v);

}  // namespace csr
