#include "csr/log_marginal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "csr/errors.hpp"

namespace csr {

LogMarginalForm::LogMarginalForm(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() > 64) throw InputError("LogMarginalForm: at most 64 axes");
  for (auto d : dims_) cells_ *= d;
}

void LogMarginalForm::add(std::vector<std::size_t> axes, double coeff) {
  std::uint64_t mask = 0;
  for (auto a : axes) {
    if (a >= dims_.size()) throw InputError("LogMarginalForm: axis out of range");
    mask |= std::uint64_t{1} << a;
  }
  for (auto it = terms_.begin(); it != terms_.end(); ++it) {
    if (it->mask != mask) continue;
    it->coeff += coeff;
    if (std::abs(it->coeff) < 1e-15) terms_.erase(it);
    return;
  }
  if (coeff == 0.0) return;

  Term term;
  term.mask = mask;
  term.coeff = coeff;
  std::vector<std::size_t> sub_strides(dims_.size(), 0);
  std::size_t stride = 1;
  for (std::size_t a = dims_.size(); a-- > 0;) {
    if (mask & (std::uint64_t{1} << a)) {
      sub_strides[a] = stride;
      stride *= dims_[a];
    }
  }
  term.size = stride;
  term.map.resize(cells_);
  std::vector<std::size_t> idx(dims_.size(), 0);
  for (std::size_t t = 0; t < cells_; ++t) {
    std::size_t sub = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) sub += idx[a] * sub_strides[a];
    term.map[t] = static_cast<std::uint32_t>(sub);
    for (std::size_t a = dims_.size(); a-- > 0;) {
      if (++idx[a] < dims_[a]) break;
      idx[a] = 0;
    }
  }
  terms_.push_back(std::move(term));
}

double LogMarginalForm::coefficient_sum() const {
  double s = 0.0;
  for (const auto& t : terms_) s += t.coeff;
  return s;
}

void LogMarginalForm::compute_marginals(std::span<const double> q, Workspace& ws) const {
  if (q.size() != cells_) throw InputError("LogMarginalForm: joint has the wrong number of cells");
  ws.marginals.resize(terms_.size());
  for (std::size_t m = 0; m < terms_.size(); ++m) {
    auto& marg = ws.marginals[m];
    marg.assign(terms_[m].size, 0.0);
    const auto& map = terms_[m].map;
    for (std::size_t t = 0; t < cells_; ++t) marg[map[t]] += q[t];
  }
}

void LogMarginalForm::evaluate(std::span<const double> q, Workspace& ws) const {
  compute_marginals(q, ws);
  ws.values.assign(cells_, 0.0);
  for (std::size_t m = 0; m < terms_.size(); ++m) {
    const auto& marg = ws.marginals[m];
    const auto& map = terms_[m].map;
    const double c = terms_[m].coeff;
    for (std::size_t t = 0; t < cells_; ++t) {
      if (q[t] > 0.0) ws.values[t] += c * std::log(marg[map[t]]);
    }
  }
}

double LogMarginalForm::minus_cgf(std::span<const double> q, double theta,
                                  std::span<const double> offset, Workspace& ws,
                                  std::span<double> cell_grad) const {
  evaluate(q, ws);
  ws.tilt.assign(cells_, 0.0);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < cells_; ++t) {
    if (q[t] <= 0.0) continue;
    const double f = ws.values[t] + (offset.empty() ? 0.0 : offset[t]);
    ws.tilt[t] = std::log(q[t]) - theta * f;
    peak = std::max(peak, ws.tilt[t]);
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < cells_; ++t) {
    if (q[t] <= 0.0) continue;
    ws.tilt[t] = std::exp(ws.tilt[t] - peak);
    sum += ws.tilt[t];
  }
  for (auto& a : ws.tilt) a /= sum;
  const double value = -(peak + std::log(sum));

  if (!cell_grad.empty()) {
    ws.tilt_marginals.resize(terms_.size());
    for (std::size_t t = 0; t < cells_; ++t) cell_grad[t] = -ws.tilt[t];
    for (std::size_t m = 0; m < terms_.size(); ++m) {
      auto& am = ws.tilt_marginals[m];
      am.assign(terms_[m].size, 0.0);
      const auto& map = terms_[m].map;
      for (std::size_t t = 0; t < cells_; ++t) am[map[t]] += ws.tilt[t];
      const auto& qm = ws.marginals[m];
      const double c = theta * terms_[m].coeff;
      for (std::size_t t = 0; t < cells_; ++t) {
        if (q[t] > 0.0) cell_grad[t] += c * q[t] * am[map[t]] / qm[map[t]];
      }
    }
  }
  return value;
}

double LogMarginalForm::expectation(std::span<const double> q, std::span<const double> offset,
                                    Workspace& ws, std::span<double> cell_grad) const {
  evaluate(q, ws);
  double value = 0.0;
  const double csum = coefficient_sum();
  for (std::size_t t = 0; t < cells_; ++t) {
    if (q[t] <= 0.0) {
      if (!cell_grad.empty()) cell_grad[t] = 0.0;
      continue;
    }
    const double off = offset.empty() ? 0.0 : offset[t];
    value += q[t] * (ws.values[t] + off);
    if (!cell_grad.empty()) cell_grad[t] = q[t] * (ws.values[t] + off + csum);
  }
  return value;
}

void softmax_backprop(std::span<const double> q, std::span<const double> cell_grad,
                      std::span<double> logit_grad) {
  const double total = std::accumulate(cell_grad.begin(), cell_grad.end(), 0.0);
  for (std::size_t s = 0; s < q.size(); ++s) logit_grad[s] = cell_grad[s] - q[s] * total;
}

}  // namespace csr
