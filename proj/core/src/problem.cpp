#include "csr/problem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "csr/errors.hpp"

namespace csr {

std::string x_axis_name() { return "X"; }
std::string y_axis_name(std::size_t j) { return "Y" + std::to_string(j + 1); }
std::string w_axis_name(std::size_t j) { return "W" + std::to_string(j + 1); }
std::string xhat_axis_name(std::size_t j) { return "Xhat" + std::to_string(j + 1); }

namespace {

std::size_t saturating_mul(std::size_t a, std::size_t b) {
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  if (a != 0 && b > kMax / a) return kMax;
  return a * b;
}

std::size_t saturating_pow(std::size_t base, std::size_t e) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < e; ++i) r = saturating_mul(r, base);
  return r;
}

}  // namespace

SourceProblem::SourceProblem(JointPmf joint, std::vector<std::size_t> xhat_sizes,
                             std::vector<std::vector<double>> distortion)
    : joint_(std::move(joint)),
      xhat_sizes_(std::move(xhat_sizes)),
      distortion_(std::move(distortion)) {
  const std::size_t k = xhat_sizes_.size();
  if (k == 0) throw InputError("problem needs k >= 1");
  if (joint_.rank() != k + 1) throw InputError("joint must have axes (X, Y1, ..., Yk)");
  if (joint_.axes()[0].name != x_axis_name()) throw InputError("first joint axis must be X");
  for (std::size_t j = 0; j < k; ++j) {
    if (joint_.axes()[1 + j].name != y_axis_name(j))
      throw InputError("joint axis " + std::to_string(j + 1) + " must be " + y_axis_name(j));
  }
  if (distortion_.size() != k) throw InputError("expected one distortion matrix per user");

  const std::size_t nx = x_size();
  const JointPmf xm = marginalize(joint_, {x_axis_name()});
  px_ = Pmf(std::vector<double>(xm.values().begin(), xm.values().end()));
  for (std::size_t x = 0; x < nx; ++x) {
    if (!(px_[x] > 0.0))
      throw InputError("source symbol x=" + std::to_string(x) + " has zero probability");
  }

  max_distortion_.resize(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    if (xhat_sizes_[j] == 0) throw InputError("empty reproduction alphabet");
    if (distortion_[j].size() != nx * xhat_sizes_[j])
      throw InputError("distortion matrix " + std::to_string(j + 1) + " has the wrong shape");
    for (double d : distortion_[j]) {
      if (!std::isfinite(d) || d < 0.0)
        throw InputError("distortion matrix " + std::to_string(j + 1) +
                         " has a negative or non-finite entry");
      max_distortion_[j] = std::max(max_distortion_[j], d);
    }
  }

  y_strides_.assign(k, 1);
  y_cells_ = 1;
  for (std::size_t j = k; j-- > 0;) {
    y_strides_[j] = y_cells_;
    y_cells_ *= y_size(j);
  }
  y_given_x_.resize(nx * y_cells_);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t c = 0; c < y_cells_; ++c)
      y_given_x_[x * y_cells_ + c] = joint_[x * y_cells_ + c] / px_[x];

  yj_given_x_.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    yj_given_x_[j].assign(nx * y_size(j), 0.0);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t c = 0; c < y_cells_; ++c)
        yj_given_x_[j][x * y_size(j) + y_component(c, j)] += y_given_x_[x * y_cells_ + c];
  }
}

namespace {

std::size_t alphabet_size(const nlohmann::json& entry, const std::string& what) {
  if (entry.is_number_unsigned() || entry.is_number_integer()) {
    const auto v = entry.get<long long>();
    if (v <= 0) throw InputError(what + " alphabet size must be positive");
    return static_cast<std::size_t>(v);
  }
  if (entry.is_array()) {
    if (entry.empty()) throw InputError(what + " alphabet is empty");
    return entry.size();
  }
  throw InputError(what + " alphabet must be a size or a label array");
}

void flatten_nested(const nlohmann::json& node, const std::vector<std::size_t>& dims,
                    std::size_t depth, std::vector<double>& out, const std::string& what) {
  if (depth == dims.size()) {
    if (!node.is_number()) throw InputError(what + ": expected a number");
    out.push_back(node.get<double>());
    return;
  }
  if (!node.is_array() || node.size() != dims[depth])
    throw InputError(what + ": expected an array of length " + std::to_string(dims[depth]) +
                     " at depth " + std::to_string(depth));
  for (const auto& child : node) flatten_nested(child, dims, depth + 1, out, what);
}

}  // namespace

SourceProblem load_problem(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("problem file is not valid JSON: ") + e.what());
  }
  try {
    if (!doc.is_object()) throw InputError("problem file must be an object");
    for (const char* key : {"k", "alphabets", "joint", "distortion"})
      if (!doc.contains(key)) throw InputError(std::string("problem file lacks field '") + key + "'");
    const auto k_signed = doc.at("k").get<long long>();
    if (k_signed <= 0) throw InputError("k must be positive");
    const auto k = static_cast<std::size_t>(k_signed);
    const auto& al = doc.at("alphabets");
    const std::size_t nx = alphabet_size(al.at("x"), "x");
    const auto& ys = al.at("y");
    const auto& xhs = al.at("xhat");
    if (!ys.is_array() || ys.size() != k) throw InputError("alphabets.y must list k alphabets");
    if (!xhs.is_array() || xhs.size() != k) throw InputError("alphabets.xhat must list k alphabets");

    std::vector<Axis> axes{{x_axis_name(), nx}};
    std::vector<std::size_t> dims{nx};
    std::vector<std::size_t> xhat_sizes;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t ny = alphabet_size(ys[j], "y");
      axes.push_back({y_axis_name(j), ny});
      dims.push_back(ny);
      xhat_sizes.push_back(alphabet_size(xhs[j], "xhat"));
    }

    std::vector<double> joint;
    flatten_nested(doc.at("joint"), dims, 0, joint, "joint");
    double sum = 0.0;
    for (double v : joint) {
      if (!std::isfinite(v) || v < 0.0) throw InputError("joint has a negative or non-finite entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "joint sums to " << sum << ", not 1";
      throw InputError(os.str());
    }

    const auto& dist = doc.at("distortion");
    if (!dist.is_array() || dist.size() != k) throw InputError("distortion must list k matrices");
    std::vector<std::vector<double>> matrices;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> m;
      flatten_nested(dist[j], {nx, xhat_sizes[j]}, 0, m,
                     "distortion matrix " + std::to_string(j + 1));
      matrices.push_back(std::move(m));
    }
    return SourceProblem(JointPmf(std::move(axes), std::move(joint)), std::move(xhat_sizes),
                         std::move(matrices));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed problem file: ") + e.what());
  }
}

SourceProblem load_problem_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open problem file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_problem(ss.str());
}

namespace {

nlohmann::json nest(std::span<const double> values, std::span<const std::size_t> dims) {
  if (dims.empty()) return values[0];
  nlohmann::json arr = nlohmann::json::array();
  const std::size_t stride = values.size() / dims[0];
  for (std::size_t i = 0; i < dims[0]; ++i)
    arr.push_back(nest(values.subspan(i * stride, stride), dims.subspan(1)));
  return arr;
}

}  // namespace

nlohmann::json problem_to_json(const SourceProblem& problem) {
  nlohmann::json doc;
  doc["k"] = problem.k();
  doc["alphabets"]["x"] = problem.x_size();
  doc["alphabets"]["y"] = nlohmann::json::array();
  doc["alphabets"]["xhat"] = nlohmann::json::array();
  doc["distortion"] = nlohmann::json::array();
  for (std::size_t j = 0; j < problem.k(); ++j) {
    doc["alphabets"]["y"].push_back(problem.y_size(j));
    doc["alphabets"]["xhat"].push_back(problem.xhat_size(j));
    const std::size_t d2[] = {problem.x_size(), problem.xhat_size(j)};
    doc["distortion"].push_back(nest(problem.distortion_matrix(j), d2));
  }
  const auto dims = problem.joint().dims();
  doc["joint"] = nest(problem.joint().values(), dims);
  return doc;
}

void RateDistortionPoint::validate(std::size_t k) const {
  if (rates.size() != k || distortions.size() != k)
    throw InputError("point needs " + std::to_string(k) + " rates and distortions");
  for (std::size_t j = 0; j < k; ++j) {
    if (!std::isfinite(rates[j]) || rates[j] < 0.0) throw InputError("rates must be finite and >= 0");
    if (!std::isfinite(distortions[j]) || distortions[j] < 0.0)
      throw InputError("distortions must be finite and >= 0");
    if (j > 0 && rates[j] < rates[j - 1])
      throw InputError("cumulative rates must be non-decreasing");
  }
}

RateDistortionPoint RateDistortionPoint::from_incremental(const std::vector<double>& increments,
                                                          std::vector<double> distortions) {
  RateDistortionPoint p;
  double acc = 0.0;
  for (double r : increments) {
    acc += r;
    p.rates.push_back(acc);
  }
  p.distortions = std::move(distortions);
  return p;
}

double RateDistortionPoint::encoder_rate(std::size_t j) const {
  double r = rates[j];
  for (std::size_t l = 0; l < j; ++l) r -= rates[l];
  return r;
}

void Weights::validate(std::size_t k) const {
  if (alpha.size() != k || beta.size() != k)
    throw InputError("weights need " + std::to_string(k) + " alphas and betas");
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (!(alpha[j] >= 0.0 && alpha[j] <= 1.0) || !(beta[j] >= 0.0 && beta[j] <= 1.0))
      throw InputError("weights must lie in [0, 1]");
    sum += alpha[j] + beta[j];
  }
  if (std::abs(sum - 1.0) > kSumTolerance) throw InputError("weights must sum to 1");
}

double Weights::alpha_max() const {
  return alpha.empty() ? 0.0 : *std::max_element(alpha.begin(), alpha.end());
}

void ParameterTuple::validate(std::size_t k) const {
  if (!(theta > 0.0) || !std::isfinite(theta)) throw InputError("theta must be positive");
  if (!(mu > 0.0) || !std::isfinite(mu)) throw InputError("mu must be positive");
  weights.validate(k);
}

void TildeParameters::validate(std::size_t k) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be >= 0");
  weights.validate(k);
}

double kappa(const RateDistortionPoint& point, const Weights& weights) {
  const std::size_t k = weights.k();
  weights.validate(k);
  if (point.rates.size() != k || point.distortions.size() != k)
    throw InputError("point and weights disagree on k");
  double value = weights.alpha[0] * point.rates[0] + weights.beta[0] * point.distortions[0];
  double prefix = point.rates[0];
  for (std::size_t j = 1; j < k; ++j) {
    value += weights.alpha[j] * (point.rates[j] - prefix) + weights.beta[j] * point.distortions[j];
    prefix += point.rates[j];
  }
  return value;
}

TLayout::TLayout(const SourceProblem& problem, std::vector<std::size_t> w_sizes)
    : k_(problem.k()), w_sizes_(std::move(w_sizes)) {
  if (w_sizes_.size() != k_) throw InputError("need one W cardinality per user");
  dims_.push_back(problem.x_size());
  for (std::size_t j = 0; j < k_; ++j) dims_.push_back(problem.y_size(j));
  for (std::size_t j = 0; j < k_; ++j) {
    if (w_sizes_[j] == 0) throw InputError("W alphabets must be non-empty");
    dims_.push_back(w_sizes_[j]);
  }
  for (std::size_t j = 0; j < k_; ++j) dims_.push_back(problem.xhat_size(j));
  strides_.assign(dims_.size(), 1);
  cells_ = 1;
  for (std::size_t a = dims_.size(); a-- > 0;) {
    strides_[a] = cells_;
    cells_ = saturating_mul(cells_, dims_[a]);
  }
}

std::vector<Axis> TLayout::axes() const {
  std::vector<Axis> out{{x_axis_name(), dims_[0]}};
  for (std::size_t j = 0; j < k_; ++j) out.push_back({y_axis_name(j), dims_[y_axis(j)]});
  for (std::size_t j = 0; j < k_; ++j) out.push_back({w_axis_name(j), dims_[w_axis(j)]});
  for (std::size_t j = 0; j < k_; ++j) out.push_back({xhat_axis_name(j), dims_[xhat_axis(j)]});
  return out;
}

std::vector<std::size_t> TLayout::unflatten(std::size_t flat) const {
  std::vector<std::size_t> idx(dims_.size());
  for (std::size_t a = 0; a < dims_.size(); ++a) {
    idx[a] = (flat / strides_[a]) % dims_[a];
  }
  return idx;
}

std::size_t TLayout::flatten(const std::vector<std::size_t>& idx) const {
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dims_.size(); ++a) flat += idx[a] * strides_[a];
  return flat;
}

std::vector<std::size_t> cardinality_caps(const SourceProblem& problem, CapScheme scheme) {
  const std::size_t k = problem.k();
  const std::size_t nx = problem.x_size();
  std::vector<std::size_t> caps(k);
  switch (scheme) {
    case CapScheme::kPStar:
    case CapScheme::kP: {
      std::size_t prod = 1;
      for (std::size_t j = 0; j < k; ++j) {
        caps[j] = (j == 0 && scheme == CapScheme::kPStar) ? nx + 3 : saturating_mul(nx, prod) + 1;
        prod = saturating_mul(prod, caps[j]);
      }
      break;
    }
    case CapScheme::kShell:
      for (std::size_t j = 0; j < k; ++j) caps[j] = saturating_pow(nx, j + 1);
      break;
    case CapScheme::kFree: {
      std::size_t all = nx;
      for (std::size_t j = 0; j < k; ++j)
        all = saturating_mul(saturating_mul(all, problem.y_size(j)), problem.xhat_size(j));
      for (std::size_t j = 0; j < k; ++j) caps[j] = saturating_pow(all, j + 1);
      break;
    }
  }
  return caps;
}

namespace {

std::size_t prefix_cells(const std::vector<std::size_t>& w_sizes, std::size_t j) {
  std::size_t c = 1;
  for (std::size_t l = 0; l < j; ++l) c *= w_sizes[l];
  return c;
}

std::vector<Axis> channel_given_axes(const SourceProblem& problem,
                                     const std::vector<std::size_t>& w_sizes, std::size_t j) {
  std::vector<Axis> given{{x_axis_name(), problem.x_size()}};
  for (std::size_t l = 0; l < j; ++l) given.push_back({w_axis_name(l), w_sizes[l]});
  return given;
}

std::vector<Axis> decoder_given_axes(const SourceProblem& problem,
                                     const std::vector<std::size_t>& w_sizes, std::size_t j) {
  std::vector<Axis> given;
  for (std::size_t l = 0; l <= j; ++l) given.push_back({w_axis_name(l), w_sizes[l]});
  given.push_back({y_axis_name(j), problem.y_size(j)});
  return given;
}

}  // namespace

ConditionalPmf decoder_as_conditional(const SourceProblem& problem,
                                      const std::vector<std::size_t>& w_sizes, std::size_t j,
                                      const Decoder& decoder) {
  if (const auto* c = std::get_if<ConditionalPmf>(&decoder)) return *c;
  const auto& table = std::get<DeterministicDecoder>(decoder).table;
  const std::size_t rows = prefix_cells(w_sizes, j + 1) * problem.y_size(j);
  const std::size_t nxh = problem.xhat_size(j);
  if (table.size() != rows) throw InputError("decoder table has the wrong size");
  std::vector<double> values(rows * nxh, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (table[r] >= nxh) throw InputError("decoder table entry out of range");
    values[r * nxh + table[r]] = 1.0;
  }
  return ConditionalPmf::from_rows(decoder_given_axes(problem, w_sizes, j),
                                   {{xhat_axis_name(j), nxh}}, std::move(values));
}

void AuxiliarySystem::validate(const SourceProblem& problem) const {
  const std::size_t k = problem.k();
  if (w_sizes.size() != k || channels.size() != k || decoders.size() != k)
    throw InputError("auxiliary system needs k channels and decoders");
  for (std::size_t j = 0; j < k; ++j) {
    if (channels[j].given() != channel_given_axes(problem, w_sizes, j) ||
        channels[j].target() != std::vector<Axis>{{w_axis_name(j), w_sizes[j]}})
      throw InputError("channel " + std::to_string(j + 1) + " has the wrong axes");
    for (std::size_t g = 0; g < channels[j].given_cells(); ++g)
      if (!channels[j].defined(g)) throw InputError("channel rows must all be defined");
    const auto dec = decoder_as_conditional(problem, w_sizes, j, decoders[j]);
    if (dec.given() != decoder_given_axes(problem, w_sizes, j) ||
        dec.target() != std::vector<Axis>{{xhat_axis_name(j), problem.xhat_size(j)}})
      throw InputError("decoder " + std::to_string(j + 1) + " has the wrong axes");
    for (std::size_t g = 0; g < dec.given_cells(); ++g)
      if (!dec.defined(g)) throw InputError("decoder rows must all be defined");
  }
}

JointPmf induce_joint(const SourceProblem& problem, const AuxiliarySystem& aux) {
  aux.validate(problem);
  const std::size_t k = problem.k();
  const TLayout layout(problem, aux.w_sizes);
  std::vector<ConditionalPmf> decs;
  for (std::size_t j = 0; j < k; ++j)
    decs.push_back(decoder_as_conditional(problem, aux.w_sizes, j, aux.decoders[j]));

  std::vector<double> values(layout.cells(), 0.0);
  std::vector<std::size_t> idx(layout.rank(), 0);
  for (std::size_t t = 0; t < layout.cells(); ++t) {
    // idx tracks t in row-major order
    const std::size_t x = idx[0];
    std::size_t ycell = 0;
    for (std::size_t j = 0; j < k; ++j) ycell = ycell * problem.y_size(j) + idx[layout.y_axis(j)];
    double v = problem.joint()[x * problem.y_cells() + ycell];
    std::size_t wprefix = 0;  // flattened w^{j}
    for (std::size_t j = 0; j < k && v > 0.0; ++j) {
      const std::size_t wj = idx[layout.w_axis(j)];
      v *= aux.channels[j](x * prefix_cells(aux.w_sizes, j) + wprefix, wj);
      wprefix = wprefix * aux.w_sizes[j] + wj;
      v *= decs[j](wprefix * problem.y_size(j) + idx[layout.y_axis(j)], idx[layout.xhat_axis(j)]);
    }
    values[t] = v;
    for (std::size_t a = layout.rank(); a-- > 0;) {
      if (++idx[a] < layout.dims()[a]) break;
      idx[a] = 0;
    }
  }
  return JointPmf(layout.axes(), std::move(values));
}

FreeJoint make_free_joint(const SourceProblem& problem, JointPmf joint) {
  const std::size_t k = problem.k();
  if (joint.rank() != 1 + 3 * k) throw InputError("free joint must be over T");
  std::vector<std::size_t> w_sizes;
  for (std::size_t j = 0; j < k; ++j) w_sizes.push_back(joint.axes()[1 + k + j].size);
  const TLayout layout(problem, w_sizes);
  if (joint.axes() != layout.axes()) throw InputError("free joint axes do not match the T layout");
  return FreeJoint{std::move(w_sizes), std::move(joint)};
}

}  // namespace csr
