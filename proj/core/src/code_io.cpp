#include <cstdio>

#include "csr/errors.hpp"
#include "csr/simulator.hpp"

namespace csr {

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string problem_hash(const SourceProblem& problem) {
  return fnv1a_hex(problem_to_json(problem).dump());
}

std::string aux_hash(const AuxiliarySystem& aux) { return fnv1a_hex(aux_to_json(aux).dump()); }

nlohmann::json aux_to_json(const AuxiliarySystem& aux) {
  nlohmann::json doc;
  doc["w_sizes"] = aux.w_sizes;
  doc["channels"] = nlohmann::json::array();
  for (const auto& c : aux.channels) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < c.given_cells(); ++r) {
      const auto row = c.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    doc["channels"].push_back(rows);
  }
  doc["decoders"] = nlohmann::json::array();
  for (const auto& d : aux.decoders) {
    if (const auto* det = std::get_if<DeterministicDecoder>(&d)) {
      doc["decoders"].push_back({{"kind", "deterministic"}, {"table", det->table}});
    } else {
      const auto& c = std::get<ConditionalPmf>(d);
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t r = 0; r < c.given_cells(); ++r) {
        const auto row = c.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
      }
      doc["decoders"].push_back({{"kind", "stochastic"}, {"rows", rows}});
    }
  }
  return doc;
}

namespace {

ConditionalPmf rows_to_conditional(std::vector<Axis> given, std::vector<Axis> target,
                                   const nlohmann::json& rows) {
  std::vector<double> values;
  std::vector<bool> defined;
  for (const auto& row : rows) {
    double s = 0.0;
    for (const auto& v : row) {
      values.push_back(v.get<double>());
      s += values.back();
    }
    defined.push_back(s > 0.0);
  }
  return ConditionalPmf(std::move(given), std::move(target), std::move(values), std::move(defined));
}

}  // namespace

AuxiliarySystem aux_from_json(const SourceProblem& problem, const nlohmann::json& doc) {
  try {
    AuxiliarySystem aux;
    aux.w_sizes = doc.at("w_sizes").get<std::vector<std::size_t>>();
    const std::size_t k = problem.k();
    if (aux.w_sizes.size() != k) throw InputError("aux: need one W size per user");
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<Axis> given{{x_axis_name(), problem.x_size()}};
      for (std::size_t l = 0; l < j; ++l) given.push_back({w_axis_name(l), aux.w_sizes[l]});
      aux.channels.push_back(rows_to_conditional(
          std::move(given), {{w_axis_name(j), aux.w_sizes[j]}}, doc.at("channels").at(j)));
      const auto& d = doc.at("decoders").at(j);
      if (d.at("kind") == "deterministic") {
        aux.decoders.emplace_back(
            DeterministicDecoder{d.at("table").get<std::vector<std::size_t>>()});
      } else {
        std::vector<Axis> dg;
        for (std::size_t l = 0; l <= j; ++l) dg.push_back({w_axis_name(l), aux.w_sizes[l]});
        dg.push_back({y_axis_name(j), problem.y_size(j)});
        aux.decoders.emplace_back(rows_to_conditional(
            std::move(dg), {{xhat_axis_name(j), problem.xhat_size(j)}}, d.at("rows")));
      }
    }
    aux.validate(problem);
    return aux;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("aux: malformed document: ") + e.what());
  }
}

nlohmann::json code_to_json(const Code& code) {
  nlohmann::json doc;
  doc["n"] = code.n;
  doc["M"] = code.M;
  doc["x_size"] = code.x_size;
  doc["y_sizes"] = code.y_sizes;
  doc["xhat_sizes"] = code.xhat_sizes;
  doc["seed"] = code.seed;
  doc["problem_hash"] = code.problem_hash;
  doc["aux_hash"] = code.aux_hash;
  doc["encoder"] = code.encoder;
  doc["decoders"] = nlohmann::json::array();
  for (const auto& d : code.decoders) {
    if (const auto* s = std::get_if<SymbolwiseDecoder>(&d))
      doc["decoders"].push_back(
          {{"kind", "symbolwise"}, {"codewords", s->codewords}, {"rule", s->rule}});
    else
      doc["decoders"].push_back(
          {{"kind", "explicit"}, {"tables", std::get<ExplicitDecoder>(d).tables}});
  }
  return doc;
}

Code code_from_json(const nlohmann::json& doc) {
  try {
    Code code;
    code.n = doc.at("n").get<std::size_t>();
    code.M = doc.at("M").get<std::vector<std::size_t>>();
    code.x_size = doc.at("x_size").get<std::size_t>();
    code.y_sizes = doc.at("y_sizes").get<std::vector<std::size_t>>();
    code.xhat_sizes = doc.at("xhat_sizes").get<std::vector<std::size_t>>();
    code.seed = doc.at("seed").get<std::uint64_t>();
    code.problem_hash = doc.value("problem_hash", "");
    code.aux_hash = doc.value("aux_hash", "");
    code.encoder = doc.at("encoder").get<std::vector<std::uint32_t>>();
    for (const auto& d : doc.at("decoders")) {
      if (d.at("kind") == "symbolwise")
        code.decoders.emplace_back(
            SymbolwiseDecoder{d.at("codewords").get<std::vector<std::uint32_t>>(),
                              d.at("rule").get<std::vector<std::uint32_t>>()});
      else if (d.at("kind") == "explicit")
        code.decoders.emplace_back(
            ExplicitDecoder{d.at("tables").get<std::vector<std::vector<std::uint32_t>>>()});
      else
        throw InputError("code: unknown decoder kind");
    }
    return code;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("code: malformed document: ") + e.what());
  }
}

}  // namespace csr
