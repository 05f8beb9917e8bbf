#pragma once

// Softmax parameterisation of a test-channel chain
//   Q_{W_1|X}, Q_{W_2|X W_1}, ..., Q_{W_k|X W^{k-1}}
// and the induced joint p(x, w^k) = P_X(x) prod_j Q_j(w_j | x, w^{j-1}).

#include <cstddef>
#include <span>
#include <vector>

#include "csr/log_marginal.hpp"
#include "csr/problem.hpp"

namespace csr {

class ChannelChain {
 public:
  ChannelChain(std::size_t x_size, std::vector<std::size_t> w_sizes);

  std::size_t k() const { return w_sizes_.size(); }
  std::size_t x_size() const { return x_size_; }
  const std::vector<std::size_t>& w_sizes() const { return w_sizes_; }
  /// Cells of (X, W_1, ..., W_k).
  std::size_t joint_cells() const { return joint_cells_; }
  /// Rows of channel j: |X| prod_{l<j} |W_l|.
  std::size_t rows(std::size_t j) const { return rows_[j]; }
  std::size_t parameter_count() const { return offsets_.back(); }
  std::size_t parameter_offset(std::size_t j) const { return offsets_[j]; }
  /// Cells of (W_1, ..., W_j).
  std::size_t prefix_cells(std::size_t j) const { return prefix_[j]; }

  /// Channel tables, row-major [x, w^{j-1}][w_j].
  std::vector<std::vector<double>> channels(std::span<const double> logits) const;
  /// Logits reproducing `channels` (log of clamped probabilities).
  std::vector<double> logits_from(const std::vector<std::vector<double>>& channels) const;

  /// p(x, w^k), row-major in (x, w_1, ..., w_k).
  std::vector<double> joint(std::span<const double> px,
                            const std::vector<std::vector<double>>& channels) const;

  /// Given the cell-scaled gradient H(x, w^k) = p * dF/dp of a function of
  /// the joint, writes dF/dlogits.
  void backprop(const std::vector<std::vector<double>>& channels, std::span<const double> cell_grad,
                std::span<double> logit_grad) const;

  /// Channel j as a ConditionalPmf with the axis names of the T layout.
  ConditionalPmf channel_pmf(const std::vector<std::vector<double>>& channels,
                             std::size_t j) const;

 private:
  std::size_t x_size_;
  std::vector<std::size_t> w_sizes_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> prefix_;
  std::vector<std::size_t> offsets_;
  std::size_t joint_cells_ = 1;
};

/// Expected-value form of alpha_1 I(X;W_1) + sum_{j>=2} alpha_j I(X;W_j|W^{j-1})
/// over the (X, W^k) joint: per cell, alpha_1 log p(x,w_1)/(p(x)p(w_1)) + ...
LogMarginalForm information_form(const ChannelChain& chain, const Weights& weights);

}  // namespace csr
