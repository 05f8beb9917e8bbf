#include "csr/channel_chain.hpp"

#include <algorithm>
#include <cmath>

#include "csr/errors.hpp"

namespace csr {

ChannelChain::ChannelChain(std::size_t x_size, std::vector<std::size_t> w_sizes)
    : x_size_(x_size), w_sizes_(std::move(w_sizes)) {
  if (x_size_ == 0) throw InputError("empty source alphabet");
  prefix_.push_back(1);
  offsets_.push_back(0);
  for (std::size_t j = 0; j < w_sizes_.size(); ++j) {
    if (w_sizes_[j] == 0) throw InputError("W alphabets must be non-empty");
    rows_.push_back(x_size_ * prefix_[j]);
    offsets_.push_back(offsets_[j] + rows_[j] * w_sizes_[j]);
    prefix_.push_back(prefix_[j] * w_sizes_[j]);
  }
  joint_cells_ = x_size_ * prefix_.back();
}

std::vector<std::vector<double>> ChannelChain::channels(std::span<const double> logits) const {
  std::vector<std::vector<double>> out(k());
  for (std::size_t j = 0; j < k(); ++j) {
    const std::size_t nw = w_sizes_[j];
    out[j].resize(rows_[j] * nw);
    for (std::size_t r = 0; r < rows_[j]; ++r) {
      const double* z = logits.data() + offsets_[j] + r * nw;
      const double m = *std::max_element(z, z + nw);
      double s = 0.0;
      for (std::size_t v = 0; v < nw; ++v) s += (out[j][r * nw + v] = std::exp(z[v] - m));
      for (std::size_t v = 0; v < nw; ++v) out[j][r * nw + v] /= s;
    }
  }
  return out;
}

std::vector<double> ChannelChain::logits_from(
    const std::vector<std::vector<double>>& channels) const {
  std::vector<double> z(parameter_count());
  for (std::size_t j = 0; j < k(); ++j)
    for (std::size_t i = 0; i < channels[j].size(); ++i)
      z[offsets_[j] + i] = std::log(std::max(channels[j][i], 1e-30));
  return z;
}

std::vector<double> ChannelChain::joint(std::span<const double> px,
                                        const std::vector<std::vector<double>>& channels) const {
  // Build p(x, w^j) one stage at a time.
  std::vector<double> cur(px.begin(), px.end());
  for (std::size_t j = 0; j < k(); ++j) {
    const std::size_t nw = w_sizes_[j];
    std::vector<double> next(cur.size() * nw);
    for (std::size_t r = 0; r < cur.size(); ++r)
      for (std::size_t v = 0; v < nw; ++v) next[r * nw + v] = cur[r] * channels[j][r * nw + v];
    cur.swap(next);
  }
  return cur;
}

void ChannelChain::backprop(const std::vector<std::vector<double>>& channels,
                            std::span<const double> cell_grad, std::span<double> logit_grad) const {
  // S_j(x, w^{j-1}, w_j) = sum of H over cells sharing that prefix.
  std::vector<double> s(cell_grad.begin(), cell_grad.end());
  for (std::size_t j = k(); j-- > 0;) {
    const std::size_t nw = w_sizes_[j];
    const std::size_t rows = rows_[j];
    double* g = logit_grad.data() + offsets_[j];
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t v = 0; v < nw; ++v) total += s[r * nw + v];
      for (std::size_t v = 0; v < nw; ++v)
        g[r * nw + v] = s[r * nw + v] - channels[j][r * nw + v] * total;
    }
    std::vector<double> folded(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t v = 0; v < nw; ++v) folded[r] += s[r * nw + v];
    s.swap(folded);
  }
}

ConditionalPmf ChannelChain::channel_pmf(const std::vector<std::vector<double>>& channels,
                                         std::size_t j) const {
  std::vector<Axis> given{{x_axis_name(), x_size_}};
  for (std::size_t l = 0; l < j; ++l) given.push_back({w_axis_name(l), w_sizes_[l]});
  std::vector<double> values(channels[j]);
  // renormalise rows exactly so the pmf validator accepts them
  const std::size_t nw = w_sizes_[j];
  for (std::size_t r = 0; r < rows_[j]; ++r) {
    double s = 0.0;
    for (std::size_t v = 0; v < nw; ++v) s += values[r * nw + v];
    for (std::size_t v = 0; v < nw; ++v) values[r * nw + v] /= s;
  }
  return ConditionalPmf::from_rows(std::move(given), {{w_axis_name(j), nw}}, std::move(values));
}

LogMarginalForm information_form(const ChannelChain& chain, const Weights& weights) {
  std::vector<std::size_t> dims{chain.x_size()};
  for (auto s : chain.w_sizes()) dims.push_back(s);
  LogMarginalForm form(dims);
  const std::size_t k = chain.k();
  auto range = [](std::size_t from, std::size_t to) {
    std::vector<std::size_t> v;
    for (std::size_t i = from; i <= to; ++i) v.push_back(i);
    return v;
  };
  const double a1 = weights.alpha[0];
  form.add({0, 1}, a1);
  form.add({0}, -a1);
  form.add({1}, -a1);
  for (std::size_t j = 1; j < k; ++j) {
    const double a = weights.alpha[j];
    std::vector<std::size_t> xw = range(0, j + 1);
    std::vector<std::size_t> w = range(1, j + 1);
    std::vector<std::size_t> xw_prev = range(0, j);
    std::vector<std::size_t> w_prev = range(1, j);
    form.add(xw, a);
    form.add(w, -a);
    form.add(xw_prev, -a);
    form.add(w_prev, a);
  }
  return form;
}

}  // namespace csr
