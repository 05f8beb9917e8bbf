#include "csr/probability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "csr/errors.hpp"

namespace csr {
namespace {

void validate_distribution(std::span<const double> values, const char* what) {
  if (values.empty()) {
    throw InputError(std::string(what) + ": empty distribution");
  }
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) {
      std::ostringstream os;
      os << what << ": entry " << v << " is negative or not finite";
      throw InputError(os.str());
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": entries sum to " << sum << ", expected 1";
    throw InputError(os.str());
  }
}

std::size_t product_of_sizes(const std::vector<Axis>& axes) {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.size;
  return n;
}

// For each cell of `joint`, the flattened index into the sub-array spanned by
// `positions` (axis positions, in the order given).
std::vector<std::size_t> projection_map(const JointPmf& joint,
                                        const std::vector<std::size_t>& positions) {
  const auto dims = joint.dims();
  std::vector<std::size_t> sub_strides(positions.size());
  std::size_t stride = 1;
  for (std::size_t i = positions.size(); i-- > 0;) {
    sub_strides[i] = stride;
    stride *= dims[positions[i]];
  }
  std::vector<std::size_t> map(joint.size());
  std::vector<std::size_t> idx(dims.size(), 0);
  for (std::size_t flat = 0; flat < joint.size(); ++flat) {
    std::size_t sub = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) sub += idx[positions[i]] * sub_strides[i];
    map[flat] = sub;
    for (std::size_t a = dims.size(); a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
  return map;
}

std::vector<std::size_t> positions_of(const JointPmf& joint, const AxisSet& names) {
  std::vector<std::size_t> pos;
  pos.reserve(names.size());
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw InputError("axis '" + n + "' listed twice");
    pos.push_back(joint.axis_index(n));
  }
  std::sort(pos.begin(), pos.end());
  return pos;
}

}  // namespace

Pmf::Pmf(std::vector<double> values) : values_(std::move(values)) {
  validate_distribution(values_, "Pmf");
}

Pmf Pmf::uniform(std::size_t n) {
  if (n == 0) throw InputError("Pmf::uniform: empty alphabet");
  return Pmf(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Pmf Pmf::point_mass(std::size_t n, std::size_t at) {
  if (at >= n) throw InputError("Pmf::point_mass: index out of range");
  std::vector<double> v(n, 0.0);
  v[at] = 1.0;
  return Pmf(std::move(v));
}

JointPmf::JointPmf(std::vector<Axis> axes, std::vector<double> values)
    : axes_(std::move(axes)), values_(std::move(values)) {
  std::unordered_set<std::string> names;
  for (const auto& a : axes_) {
    if (a.size == 0) throw InputError("JointPmf: axis '" + a.name + "' has size 0");
    if (!names.insert(a.name).second) throw InputError("JointPmf: duplicate axis '" + a.name + "'");
  }
  if (values_.size() != product_of_sizes(axes_)) {
    throw InputError("JointPmf: value count does not match axis sizes");
  }
  validate_distribution(values_, "JointPmf");
  strides_.resize(axes_.size());
  std::size_t stride = 1;
  for (std::size_t i = axes_.size(); i-- > 0;) {
    strides_[i] = stride;
    stride *= axes_[i].size;
  }
}

std::vector<std::size_t> JointPmf::dims() const {
  std::vector<std::size_t> d;
  d.reserve(axes_.size());
  for (const auto& a : axes_) d.push_back(a.size);
  return d;
}

std::size_t JointPmf::axis_index(std::string_view name) const {
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    if (axes_[i].name == name) return i;
  }
  throw InputError("unknown axis '" + std::string(name) + "'");
}

bool JointPmf::has_axis(std::string_view name) const {
  return std::any_of(axes_.begin(), axes_.end(), [&](const Axis& a) { return a.name == name; });
}

std::size_t JointPmf::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != axes_.size()) throw InputError("JointPmf: index rank mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= axes_[i].size) throw InputError("JointPmf: index out of range");
    flat += index[i] * strides_[i];
  }
  return flat;
}

std::vector<std::size_t> JointPmf::unflatten(std::size_t flat) const {
  std::vector<std::size_t> idx(axes_.size());
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    idx[i] = flat / strides_[i];
    flat %= strides_[i];
  }
  return idx;
}

ConditionalPmf::ConditionalPmf(std::vector<Axis> given, std::vector<Axis> target,
                               std::vector<double> values, std::vector<bool> defined)
    : given_(std::move(given)),
      target_(std::move(target)),
      given_cells_(product_of_sizes(given_)),
      target_cells_(product_of_sizes(target_)),
      values_(std::move(values)),
      defined_(std::move(defined)) {
  if (values_.size() != given_cells_ * target_cells_ || defined_.size() != given_cells_) {
    throw InputError("ConditionalPmf: table shape does not match axes");
  }
  for (std::size_t g = 0; g < given_cells_; ++g) {
    if (defined_[g]) validate_distribution(row(g), "ConditionalPmf row");
  }
}

ConditionalPmf ConditionalPmf::from_rows(std::vector<Axis> given, std::vector<Axis> target,
                                         std::vector<double> values) {
  const std::size_t rows = product_of_sizes(given);
  return ConditionalPmf(std::move(given), std::move(target), std::move(values),
                        std::vector<bool>(rows, true));
}

JointPmf marginalize(const JointPmf& joint, const AxisSet& keep) {
  const auto pos = positions_of(joint, keep);
  std::vector<Axis> axes;
  for (auto p : pos) axes.push_back(joint.axes()[p]);
  const auto map = projection_map(joint, pos);
  std::vector<double> out(product_of_sizes(axes), 0.0);
  for (std::size_t t = 0; t < joint.size(); ++t) out[map[t]] += joint[t];
  return JointPmf(std::move(axes), std::move(out));
}

ConditionalPmf condition(const JointPmf& joint, const AxisSet& given) {
  const auto gpos = positions_of(joint, given);
  if (gpos.size() >= joint.rank()) {
    throw InputError("condition: conditioning set must be a strict subset of the axes");
  }
  std::vector<std::size_t> tpos;
  for (std::size_t i = 0; i < joint.rank(); ++i) {
    if (!std::binary_search(gpos.begin(), gpos.end(), i)) tpos.push_back(i);
  }
  std::vector<Axis> gaxes, taxes;
  for (auto p : gpos) gaxes.push_back(joint.axes()[p]);
  for (auto p : tpos) taxes.push_back(joint.axes()[p]);
  const std::size_t gcells = product_of_sizes(gaxes);
  const std::size_t tcells = product_of_sizes(taxes);
  const auto gmap = projection_map(joint, gpos);
  const auto tmap = projection_map(joint, tpos);

  std::vector<double> mass(gcells, 0.0);
  std::vector<double> table(gcells * tcells, 0.0);
  for (std::size_t t = 0; t < joint.size(); ++t) {
    mass[gmap[t]] += joint[t];
    table[gmap[t] * tcells + tmap[t]] += joint[t];
  }
  std::vector<bool> defined(gcells, false);
  for (std::size_t g = 0; g < gcells; ++g) {
    if (mass[g] <= 0.0) continue;
    defined[g] = true;
    double row_sum = 0.0;
    for (std::size_t c = 0; c < tcells; ++c) row_sum += table[g * tcells + c];
    for (std::size_t c = 0; c < tcells; ++c) table[g * tcells + c] /= row_sum;
  }
  return ConditionalPmf(std::move(gaxes), std::move(taxes), std::move(table), std::move(defined));
}

JointPmf multiply(const JointPmf& marginal, const ConditionalPmf& conditional) {
  if (marginal.axes() != conditional.given()) {
    throw InputError("multiply: marginal axes must equal the conditional's given axes");
  }
  std::vector<Axis> axes = marginal.axes();
  for (const auto& a : conditional.target()) axes.push_back(a);
  std::vector<double> values(marginal.size() * conditional.target_cells(), 0.0);
  for (std::size_t g = 0; g < marginal.size(); ++g) {
    if (marginal[g] <= 0.0) continue;
    for (std::size_t c = 0; c < conditional.target_cells(); ++c) {
      values[g * conditional.target_cells() + c] = marginal[g] * conditional(g, c);
    }
  }
  return JointPmf(std::move(axes), std::move(values));
}

double entropy(const Pmf& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double mutual_information(const Pmf& px, const ConditionalPmf& channel) {
  if (px.size() != channel.given_cells()) {
    throw InputError("mutual_information: channel input alphabet does not match px");
  }
  const std::size_t ny = channel.target_cells();
  std::vector<double> qy(ny, 0.0);
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] <= 0.0) continue;
    if (!channel.defined(x)) {
      throw NumericalDomainError("mutual_information: channel row undefined at a positive input");
    }
    for (std::size_t y = 0; y < ny; ++y) qy[y] += px[x] * channel(x, y);
  }
  double info = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (px[x] <= 0.0) continue;
    for (std::size_t y = 0; y < ny; ++y) {
      const double w = channel(x, y);
      if (w <= 0.0) continue;
      info += px[x] * w * std::log(w / qy[y]);
    }
  }
  return std::max(info, 0.0);
}

double conditional_mutual_information(const JointPmf& joint, const AxisSet& a, const AxisSet& b,
                                      const AxisSet& given) {
  std::unordered_set<std::string> seen;
  for (const auto* set : {&a, &b, &given}) {
    for (const auto& n : *set) {
      if (!seen.insert(n).second) {
        throw InputError("conditional_mutual_information: axis '" + n + "' appears in two sets");
      }
    }
  }
  if (a.empty() || b.empty()) throw InputError("conditional_mutual_information: empty axis set");

  auto pos = [&](const AxisSet& s) { return positions_of(joint, s); };
  auto merged = [](std::vector<std::size_t> x, const std::vector<std::size_t>& y) {
    x.insert(x.end(), y.begin(), y.end());
    std::sort(x.begin(), x.end());
    return x;
  };
  const auto pa = pos(a), pb = pos(b), pg = pos(given);
  const auto abg = merged(merged(pa, pb), pg);
  const auto ag = merged(pa, pg);
  const auto bg = merged(pb, pg);

  auto sub_marginal = [&](const std::vector<std::size_t>& p, std::vector<std::size_t>& map) {
    map = projection_map(joint, p);
    std::size_t cells = 1;
    for (auto i : p) cells *= joint.axes()[i].size;
    std::vector<double> m(cells, 0.0);
    for (std::size_t t = 0; t < joint.size(); ++t) m[map[t]] += joint[t];
    return m;
  };
  std::vector<std::size_t> m_abg, m_ag, m_bg, m_g;
  const auto p_abg = sub_marginal(abg, m_abg);
  const auto p_ag = sub_marginal(ag, m_ag);
  const auto p_bg = sub_marginal(bg, m_bg);
  const auto p_g = sub_marginal(pg, m_g);

  // Each (a,b,g) cell once: sum over representative joint cells.
  std::vector<bool> done(p_abg.size(), false);
  double info = 0.0;
  for (std::size_t t = 0; t < joint.size(); ++t) {
    const auto c = m_abg[t];
    if (done[c]) continue;
    done[c] = true;
    const double pabg = p_abg[c];
    if (pabg <= 0.0) continue;
    info += pabg * std::log(pabg * p_g[m_g[t]] / (p_ag[m_ag[t]] * p_bg[m_bg[t]]));
  }
  return std::max(info, 0.0);
}

Pmf simplex_embed(std::span<const double> free_params) {
  if (free_params.empty()) throw InputError("simplex_embed: empty parameter vector");
  const double m = *std::max_element(free_params.begin(), free_params.end());
  std::vector<double> v(free_params.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::exp(free_params[i] - m);
    z += v[i];
  }
  for (auto& x : v) x /= z;
  return Pmf(std::move(v));
}

SimplexProjection simplex_project(std::span<const double> v) {
  if (v.empty()) throw InputError("simplex_project: empty vector");
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
    return {Pmf::uniform(v.size()), true};
  }
  // Sort-based projection: find the threshold tau with sum(max(v - tau, 0)) = 1.
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumulative += u[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) tau = t;
  }
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::max(v[i] - tau, 0.0);
    total += out[i];
  }
  for (auto& x : out) x /= total;
  return {Pmf(std::move(out)), false};
}

}  // namespace csr
