#pragma once

// Evaluation engine for per-cell functionals of the form
//
//   f_q(t) = sum_m c_m log q_{S_m}(t_{S_m})
//
// over a dense joint q, where each S_m is a subset of the axes. Every
// log-likelihood combination used by the exponent and region code reduces to
// this shape (conditionals are ratios of marginals), which gives one place to
// compute values, minus cumulant generating functions and their gradients.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace csr {

class LogMarginalForm {
 public:
  explicit LogMarginalForm(std::vector<std::size_t> dims);

  /// Adds c * log q_S. Terms over the same axis subset are merged; terms whose
  /// merged coefficient is zero are dropped.
  void add(std::vector<std::size_t> axes, double coeff);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t cells() const { return cells_; }
  std::size_t terms() const { return terms_.size(); }
  double coefficient_sum() const;

  struct Workspace {
    std::vector<std::vector<double>> marginals;
    std::vector<std::vector<double>> tilt_marginals;
    std::vector<double> values;
    std::vector<double> tilt;
  };

  /// ws.values[t] = f_q(t) for q(t) > 0; cells with q(t) == 0 are set to 0
  /// and must not be read.
  void evaluate(std::span<const double> q, Workspace& ws) const;

  /// -log sum_{t: q(t)>0} q(t) exp(-theta (f_q(t) + offset(t))).
  /// `offset` may be empty. When `cell_grad` is non-null it receives
  /// H_s = q_s * d/dq_s of the result, treating the marginals as functions of q.
  /// After the call ws.tilt holds the normalised tilted distribution.
  double minus_cgf(std::span<const double> q, double theta, std::span<const double> offset,
                   Workspace& ws, std::span<double> cell_grad = {}) const;

  /// sum_t q(t) (f_q(t) + offset(t)), with the same cell-scaled gradient convention.
  double expectation(std::span<const double> q, std::span<const double> offset, Workspace& ws,
                     std::span<double> cell_grad = {}) const;

 private:
  struct Term {
    std::uint64_t mask = 0;
    double coeff = 0.0;
    std::size_t size = 0;
    std::vector<std::uint32_t> map;
  };

  void compute_marginals(std::span<const double> q, Workspace& ws) const;

  std::vector<std::size_t> dims_;
  std::size_t cells_ = 1;
  std::vector<Term> terms_;
};

/// Gradient w.r.t. softmax logits z, q = softmax(z), from a cell-scaled
/// gradient H: dF/dz_s = H_s - q_s sum_u H_u. Masked cells (q_s = 0, H_s = 0)
/// get a zero gradient.
void softmax_backprop(std::span<const double> q, std::span<const double> cell_grad,
                      std::span<double> logit_grad);

}  // namespace csr
