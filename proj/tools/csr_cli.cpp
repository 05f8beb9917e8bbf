// csr: region membership, strong converse exponents and code simulation for
// successive refinement with causal side information.
//
// Exit codes: 0 ok / inside, 3 outside, 4 boundary-indeterminate, 1 usage
// error, 2 data error, 5 bound violated (verify).

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csr/errors.hpp"
#include "csr/exponent.hpp"
#include "csr/region.hpp"
#include "csr/simulator.hpp"

namespace {

using nlohmann::json;
using namespace csr;

constexpr int kSchemaVersion = 1;

struct Config {
  std::string command;
  std::string problem;
  std::vector<double> rates;
  bool incremental = false;
  std::vector<double> distortions;
  std::size_t grid = 6;
  std::size_t refinements = 2;
  std::size_t multistarts = 4;
  std::size_t mu_points = 10;
  std::size_t theta_points = 10;
  std::size_t lambda_points = 8;
  std::size_t budget = std::size_t{1} << 24;
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> seed;
  std::string n = "4";
  std::string format = "json";
  std::string log_base = "e";
  std::string aux;
  std::string code_in;
  std::string code_out;
  bool no_dp = false;
  unsigned threads = 1;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> parse_n_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  auto to_n = [](const std::string& s) {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size() || v < 1 || v > 16) throw UsageError("--n entries must be in [1, 16]");
    return static_cast<std::size_t>(v);
  };
  try {
    while (std::getline(ss, item, ',')) {
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        out.push_back(to_n(item));
      } else {
        const std::size_t lo = to_n(item.substr(0, dash)), hi = to_n(item.substr(dash + 1));
        if (hi < lo) throw UsageError("--n range must be increasing");
        for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
      }
    }
  } catch (const std::invalid_argument&) {
    throw UsageError("--n expects a list such as 2,3 or a range such as 2-8");
  }
  if (out.empty()) throw UsageError("--n is empty");
  return out;
}

json config_echo(const Config& c) {
  json j;
  j["command"] = c.command;
  j["problem"] = c.problem;
  j["rates_nats"] = c.rates;
  j["incremental_rates"] = c.incremental;
  j["distortions"] = c.distortions;
  j["grid"] = c.grid;
  j["refinements"] = c.refinements;
  j["multistarts"] = c.multistarts;
  j["mu_points"] = c.mu_points;
  j["theta_points"] = c.theta_points;
  j["lambda_points"] = c.lambda_points;
  j["budget"] = c.budget;
  j["samples"] = c.samples ? json(*c.samples) : json(nullptr);
  j["seed"] = *c.seed;
  j["n"] = c.n;
  j["format"] = c.format;
  j["log_base"] = c.log_base;
  j["aux"] = c.aux;
  j["code"] = c.code_in;
  j["no_dp"] = c.no_dp;
  return j;
}

// Adds key_nats and, in base 2, key_bits.
void put_info(json& j, const std::string& key, double nats, const Config& c) {
  j[key + "_nats"] = nats;
  if (c.log_base == "2") j[key + "_bits"] = nats / std::log(2.0);
}

json weights_json(const Weights& w) { return {{"alpha", w.alpha}, {"beta", w.beta}}; }

RateDistortionPoint make_point(const Config& c, std::size_t k) {
  if (c.rates.size() != k || c.distortions.size() != k)
    throw UsageError("--rates and --distortions need " + std::to_string(k) + " entries");
  RateDistortionPoint p = c.incremental ? RateDistortionPoint::from_incremental(c.rates, c.distortions)
                                        : RateDistortionPoint{c.rates, c.distortions};
  p.validate(k);
  return p;
}

MembershipOptions membership_options(const Config& c) {
  MembershipOptions m;
  m.grid = c.grid;
  m.refinements = c.refinements;
  m.region.multistarts = c.multistarts;
  m.region.seed = *c.seed;
  m.region.threads = c.threads;
  return m;
}

ExponentOptions exponent_options(const Config& c) {
  ExponentOptions o;
  o.weight_grid = c.grid;
  o.refinements = c.refinements;
  o.mu_points = c.mu_points;
  o.theta_points = c.theta_points;
  o.lambda_points = c.lambda_points;
  o.inner.multistarts = c.multistarts;
  o.inner.seed = *c.seed;
  o.membership = membership_options(c);
  o.threads = c.threads;
  return o;
}

json region_result(const MembershipReport& r, const Config& c) {
  json j;
  j["verdict"] = to_string(r.verdict);
  put_info(j, "margin", r.margin, c);
  j["witness"] = weights_json(r.witness);
  put_info(j, "witness_value", r.witness_value, c);
  j["nodes"] = r.nodes;
  j["solver_warning"] = r.solver_warning;
  return j;
}

json exponent_result(const ExponentResult& r, const Config& c) {
  json j;
  put_info(j, "F", r.F, c);
  put_info(j, "tilde_F", r.tilde_F, c);
  put_info(j, "certificate", r.certificate, c);
  j["rho_nats2"] = r.rho;
  j["rho_is_lower_bound"] = r.rho_is_lower_bound;
  put_info(j, "margin", r.margin, c);
  j["verdict"] = to_string(r.verdict);
  j["argsup"] = {{"theta", r.argsup.theta}, {"mu", r.argsup.mu},
                 {"weights", weights_json(r.argsup.weights)}};
  j["argsup_at_mu_limit"] = r.argsup_at_mu_limit;
  j["tilde_argsup"] = {{"lambda", r.tilde_argsup.lambda},
                       {"weights", weights_json(r.tilde_argsup.weights)}};
  j["f_nodes"] = r.f_nodes;
  j["tilde_nodes"] = r.tilde_nodes;
  j["solver_warnings"] = r.solver_warnings;
  j["solver_status"] = r.solver_warnings == 0 ? "converged" : "multistart-best";
  return j;
}

AuxiliarySystem pick_aux(const SourceProblem& problem, const RateDistortionPoint& point,
                         const Config& c) {
  if (!c.aux.empty()) return aux_from_json(problem, json::parse(read_file(c.aux)));
  // hyperplane minimiser at the weights where the point is closest to leaving the region
  const auto options = membership_options(c);
  HyperplaneCache cache(problem, options.region);
  const auto report = membership(problem, point, options, &cache);
  return cache.get(report.witness).argmin;
}

Code build_code(const SourceProblem& problem, const RateDistortionPoint& point,
                const AuxiliarySystem& aux, std::size_t n, const Config& c) {
  std::vector<std::size_t> M;
  for (std::size_t j = 0; j < problem.k(); ++j) {
    const double m = std::floor(std::exp(static_cast<double>(n) * point.encoder_rate(j)) + 1e-9);
    if (m > 1e7) throw BudgetError("message set too large at n=" + std::to_string(n) +
                                   "; lower the rates or n");
    M.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(m)));
  }
  Code code = random_code(problem, aux, n, M, derive_seed(*c.seed, n));
  code.problem_hash = problem_hash(problem);
  code.aux_hash = aux_hash(aux);
  if (!c.no_dp) {
    DpOptions dp;
    dp.threads = c.threads;
    std::vector<CodeDecoder> upgraded;
    for (std::size_t j = 0; j < problem.k(); ++j) {
      try {
        upgraded.emplace_back(dp_decoder(problem, code, j, point.distortions[j], dp));
      } catch (const BudgetError&) {
        upgraded.push_back(code.decoders[j]);
      }
    }
    code.decoders = std::move(upgraded);
  }
  return code;
}

EvaluationReport evaluate(const SourceProblem& problem, const Code& code,
                          const std::vector<double>& D, const Config& c) {
  if (c.samples) {
    MonteCarloOptions mc;
    mc.samples = *c.samples;
    mc.seed = derive_seed(*c.seed, 0x5eedULL + code.n);
    mc.threads = c.threads;
    return mc_pc(problem, code, D, mc);
  }
  return exact_pc(problem, code, D, c.budget);
}

json report_json(const EvaluationReport& r) {
  json j;
  j["mode"] = r.exact ? "exact" : "monte-carlo";
  j["pc"] = r.pc;
  j["pe"] = 1.0 - r.pc;
  j["excess"] = r.excess;
  j["expected_distortion"] = r.expected_distortion;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["samples"] = r.samples;
  return j;
}

std::string code_kind(const Code& code) {
  std::string kinds;
  for (const auto& d : code.decoders) {
    if (!kinds.empty()) kinds += ",";
    kinds += std::holds_alternative<ExplicitDecoder>(d) ? "dp" : "symbolwise";
  }
  return kinds;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void flatten(const json& v, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) flatten(v[i], prefix + "." + std::to_string(i), out);
  } else {
    out.emplace_back(prefix, scalar_text(v));
  }
}

void emit(const json& doc, const Config& c) {
  if (c.format == "json") {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  // verify rows form a table; everything else is key,value
  if (doc.at("result").contains("rows")) {
    const auto& rows = doc["result"]["rows"];
    std::vector<std::string> cols;
    for (auto it = rows[0].begin(); it != rows[0].end(); ++it) cols.push_back(it.key());
    for (std::size_t i = 0; i < cols.size(); ++i) std::cout << (i ? "," : "") << cols[i];
    std::cout << "\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < cols.size(); ++i)
        std::cout << (i ? "," : "") << (row[cols[i]].is_array() ? "\"" + row[cols[i]].dump() + "\""
                                                                : scalar_text(row[cols[i]]));
      std::cout << "\n";
    }
    return;
  }
  std::vector<std::pair<std::string, std::string>> kv;
  flatten(doc, "", kv);
  std::cout << "key,value\n";
  for (const auto& [k, v] : kv) std::cout << k << "," << v << "\n";
}

int run(const Config& c) {
  const std::string text = read_file(c.problem);
  const SourceProblem problem = load_problem(text);
  const RateDistortionPoint point = make_point(c, problem.k());

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = c.command;
  doc["problem_hash"] = fnv1a_hex(text);
  doc["config"] = config_echo(c);
  int code = 0;

  if (c.command == "region") {
    const auto report = membership(problem, point, membership_options(c));
    doc["result"] = region_result(report, c);
    code = report.verdict == Verdict::kInside ? 0 : report.verdict == Verdict::kOutside ? 3 : 4;
  } else if (c.command == "exponent") {
    doc["result"] = exponent_result(evaluate_exponents(problem, point, exponent_options(c)), c);
  } else if (c.command == "simulate") {
    const auto ns = parse_n_list(c.n);
    if (ns.size() != 1) throw UsageError("simulate takes a single --n");
    Code sim;
    if (!c.code_in.empty()) {
      sim = code_from_json(json::parse(read_file(c.code_in)));
      sim.validate(problem);
      if (!sim.problem_hash.empty() && sim.problem_hash != problem_hash(problem))
        throw InputError("code was built for a different problem");
    } else {
      sim = build_code(problem, point, pick_aux(problem, point, c), ns[0], c);
    }
    if (!c.code_out.empty()) {
      std::ofstream out(c.code_out, std::ios::binary);
      out << code_to_json(sim).dump() << "\n";
    }
    const auto report = evaluate(problem, sim, point.distortions, c);
    json r = report_json(report);
    r["n"] = sim.n;
    r["M"] = sim.M;
    r["decoders"] = code_kind(sim);
    r["code_hash"] = fnv1a_hex(code_to_json(sim).dump());
    doc["result"] = r;
  } else if (c.command == "verify") {
    const auto ns = parse_n_list(c.n);
    const auto exponent = evaluate_exponents(problem, point, exponent_options(c));
    const auto aux = pick_aux(problem, point, c);
    json r = exponent_result(exponent, c);
    r["rows"] = json::array();
    bool all = true;
    for (std::size_t n : ns) {
      const Code sim = build_code(problem, point, aux, n, c);
      auto report = evaluate(problem, sim, point.distortions, c);
      verify_bound(sim, point, exponent.F, report);
      all = all && report.bound_satisfied;
      json row;
      row["n"] = n;
      row["M"] = sim.M;
      row["mode"] = report.exact ? "exact" : "monte-carlo";
      row["pc"] = report.pc;
      row["pc_upper"] = report.ci_high;
      row["bound"] = report.bound;
      row["satisfied"] = report.bound_satisfied;
      r["rows"].push_back(row);
    }
    r["all_satisfied"] = all;
    doc["result"] = r;
    code = all ? 0 : 5;
  }
  emit(doc, c);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rate-distortion region and strong converse exponents for successive refinement "
               "with causal side information"};
  app.require_subcommand(1);
  Config c;
  std::uint64_t seed = 0;
  std::size_t samples = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--problem", c.problem, "Problem file (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--rates", c.rates, "Cumulative rates in nats, comma separated")
        ->required()->delimiter(',');
    sub->add_flag("--incremental-rates", c.incremental, "Read --rates as per-encoder increments");
    sub->add_option("--distortions", c.distortions, "Distortion levels, comma separated")
        ->required()->delimiter(',');
    sub->add_option("--grid", c.grid, "Weight grid divisions")->check(CLI::Range(1, 64));
    sub->add_option("--refinements", c.refinements, "Weight refinement rounds")->check(CLI::Range(0, 8));
    sub->add_option("--multistarts", c.multistarts, "Optimizer starts")->check(CLI::Range(1, 1024));
    sub->add_option("--seed", seed, "Random seed")->required();
    sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--log-base", c.log_base, "Display base for information quantities")
        ->check(CLI::IsMember({"e", "2"}));
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->check(CLI::Range(0, 256));
  };
  auto add_exponent = [&](CLI::App* sub) {
    sub->add_option("--mu-points", c.mu_points, "mu grid size")->check(CLI::Range(1, 200));
    sub->add_option("--theta-points", c.theta_points, "theta grid size")->check(CLI::Range(1, 200));
    sub->add_option("--lambda-points", c.lambda_points, "lambda grid size")->check(CLI::Range(1, 200));
  };
  auto add_sim = [&](CLI::App* sub, const char* n_help) {
    sub->add_option("--n", c.n, n_help);
    sub->add_option("--samples", samples, "Monte Carlo samples (default: exact enumeration)")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1000000000}));
    sub->add_option("--budget", c.budget, "Exact enumeration budget (sequences)")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 32));
    sub->add_option("--aux", c.aux, "Auxiliary system file (default: region optimizer)");
    sub->add_flag("--no-dp", c.no_dp, "Keep symbolwise decoders");
  };

  auto* region = app.add_subcommand("region", "Region membership of a rate-distortion point");
  add_common(region);
  auto* exponent = app.add_subcommand("exponent", "Exponent F, lower bound F-tilde and certificate");
  add_common(exponent);
  add_exponent(exponent);
  auto* simulate = app.add_subcommand("simulate", "Build a code and evaluate its success probability");
  add_common(simulate);
  add_sim(simulate, "Blocklength");
  simulate->add_option("--code", c.code_in, "Load a code instead of building one");
  simulate->add_option("--code-out", c.code_out, "Write the code to this file");
  auto* verify = app.add_subcommand("verify", "Check P_c <= (2k+3) exp(-n F) over blocklengths");
  add_common(verify);
  add_exponent(verify);
  add_sim(verify, "Blocklengths, e.g. 2-8 or 2,4,6");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  c.command = app.get_subcommands().front()->get_name();
  c.seed = seed;
  auto* sub = app.get_subcommands().front();
  if (sub->get_option_no_throw("--samples") && sub->count("--samples") > 0) c.samples = samples;

  try {
    return run(c);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const BudgetError& e) {
    std::cerr << "budget exceeded: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
