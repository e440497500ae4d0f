#include "rateshift/model_io.hpp"

#include "rateshift/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rateshift {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

const json& field(const json& doc, const char* name) {
  if (!doc.contains(name)) throw ModelError(std::string("model document lacks field '") + name + "'");
  return doc.at(name);
}

void reject_unknown(const json& doc, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.contains(key)) throw ModelError("unknown field '" + key + "' in model document");
  }
}

double number(const json& v, const std::string& what) {
  if (!v.is_number()) throw ModelError(what + " must be a number");
  return v.get<double>();
}

Eigen::VectorXd vector(const json& v, const std::string& what) {
  if (!v.is_array()) throw ModelError(what + " must be an array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) out(static_cast<Eigen::Index>(k)) = number(v[k], what);
  return out;
}

Eigen::MatrixXd matrix(const json& v, int rows, int cols, const std::string& what) {
  if (!v.is_array() || static_cast<int>(v.size()) != rows) {
    throw ModelError(what + " must have " + std::to_string(rows) + " rows");
  }
  Eigen::MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ModelError(what + " row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
    }
    for (int j = 0; j < cols; ++j) out(i, j) = number(row[static_cast<std::size_t>(j)], what);
  }
  return out;
}

Eigen::VectorXd sized_vector(const json& v, int n, const std::string& what) {
  Eigen::VectorXd out = vector(v, what);
  if (out.size() != n) throw ModelError(what + " must have " + std::to_string(n) + " entries");
  return out;
}

StateSpace states(const json& v, const std::string& what) {
  if (v.is_number_integer()) {
    const int n = v.get<int>();
    if (n < 1) throw ModelError(what + " must be positive");
    return StateSpace::indexed(n);
  }
  if (!v.is_array() || v.empty()) throw ModelError(what + " must be a count or a nonempty array of labels");
  std::vector<std::string> labels;
  for (const json& l : v) {
    if (!l.is_string()) throw ModelError(what + " labels must be strings");
    labels.push_back(l.get<std::string>());
  }
  return StateSpace(std::move(labels));
}

std::string digest(const json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ChainModel parse_chain(const json& doc) {
  reject_unknown(doc, {"schema_version", "model_type", "states", "gamma_bar", "gamma", "gamma_breaks", "init",
                       "ratio_bound"});
  StateSpace s = states(field(doc, "states"), "states");
  const int n = s.size();
  RateMatrix reference(matrix(field(doc, "gamma_bar"), n, n, "gamma_bar"));
  std::optional<TargetRateFamily> target;
  if (doc.contains("gamma_breaks")) {
    const json& tables = field(doc, "gamma");
    if (!tables.is_array()) throw ModelError("gamma must be a list of tables when gamma_breaks is present");
    std::vector<Eigen::MatrixXd> rates;
    for (const json& t : tables) rates.push_back(matrix(t, n, n, "gamma"));
    const Eigen::VectorXd b = vector(doc.at("gamma_breaks"), "gamma_breaks");
    target = TargetRateFamily::piecewise_in_time(std::vector<double>(b.data(), b.data() + b.size()), std::move(rates));
  } else {
    target = TargetRateFamily::constant(matrix(field(doc, "gamma"), n, n, "gamma"));
  }
  if (doc.contains("ratio_bound")) target = target->with_ratio_bound(number(doc.at("ratio_bound"), "ratio_bound"));
  return ChainModel{std::move(s), std::move(reference), std::move(*target),
                    sized_vector(field(doc, "init"), n, "init")};
}

CmomModel parse_cmom(const json& doc) {
  reject_unknown(doc, {"schema_version", "model_type", "hidden_states", "obs_states", "lambda", "gamma_bar",
                       "gamma", "mu", "init_obs", "ratio_bound"});
  StateSpace hidden = states(field(doc, "hidden_states"), "hidden_states");
  StateSpace obs = states(field(doc, "obs_states"), "obs_states");
  const int m = hidden.size();
  const int o = obs.size();
  const json& tables = field(doc, "gamma");
  if (!tables.is_array() || static_cast<int>(tables.size()) != m) {
    throw ModelError("gamma must hold one table per hidden state");
  }
  std::vector<Eigen::MatrixXd> per_hidden;
  for (const json& t : tables) per_hidden.push_back(matrix(t, o, o, "gamma"));
  RateMatrix reference(matrix(field(doc, "gamma_bar"), o, o, "gamma_bar"));
  TargetRateFamily rates = TargetRateFamily::state_dependent(std::move(per_hidden));
  const double bound = doc.contains("ratio_bound") ? number(doc.at("ratio_bound"), "ratio_bound")
                                                   : observed_ratio_bound(reference, rates);
  return CmomModel{
      .hidden_states = std::move(hidden),
      .obs_states = std::move(obs),
      .lambda = RateMatrix(matrix(field(doc, "lambda"), m, m, "lambda")),
      .simulator = {},
      .obs_rates = std::move(rates),
      .reference = std::move(reference),
      .mu = sized_vector(field(doc, "mu"), m, "mu"),
      .init_obs = sized_vector(field(doc, "init_obs"), o, "init_obs"),
      .ratio_bound = bound,
  };
}

CthmmModel parse_cthmm(const json& doc) {
  reject_unknown(doc, {"schema_version", "model_type", "hidden_states", "obs_states", "lambda", "gamma_bar",
                       "q_bar", "gamma", "q", "mu", "init_obs"});
  StateSpace hidden = states(field(doc, "hidden_states"), "hidden_states");
  StateSpace obs = states(field(doc, "obs_states"), "obs_states");
  const int m = hidden.size();
  const int o = obs.size();
  return CthmmModel{
      .hidden_states = std::move(hidden),
      .obs_states = std::move(obs),
      .lambda = RateMatrix(matrix(field(doc, "lambda"), m, m, "lambda")),
      .simulator = {},
      .update_rate = sized_vector(field(doc, "gamma"), m, "gamma"),
      .emission = matrix(field(doc, "q"), m, o, "q"),
      .reference_update = number(field(doc, "gamma_bar"), "gamma_bar"),
      .reference_emission = sized_vector(field(doc, "q_bar"), o, "q_bar"),
      .mu = sized_vector(field(doc, "mu"), m, "mu"),
      .init_obs = sized_vector(field(doc, "init_obs"), o, "init_obs"),
  };
}

}  // namespace

double observed_ratio_bound(const RateMatrix& reference, const TargetRateFamily& target) {
  double bound = 0.0;
  const int hidden = std::max(1, target.hidden_size());
  for (StateIndex x = 0; x < hidden; ++x) {
    for (StateIndex i = 0; i < reference.size(); ++i) {
      const double tgt = target.leave_rate(i, RateArg{0.0, x});
      if (reference.leave_rate(i) > 0.0) bound = std::max(bound, tgt / reference.leave_rate(i));
    }
  }
  return bound;
}

ModelDocument parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("model document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ModelError("model document must be a JSON object");
  const json& version = field(doc, "schema_version");
  if (!version.is_number_integer() || version.get<int>() != kSchemaVersion) {
    throw ModelError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  const json& type = field(doc, "model_type");
  if (!type.is_string()) throw ModelError("model_type must be a string");
  ModelDocument out;
  out.model_type = type.get<std::string>();
  out.hash = digest(doc);
  try {
    if (out.model_type == "chain") {
      out.chain = parse_chain(doc);
    } else if (out.model_type == "cmom") {
      out.cmom = parse_cmom(doc);
    } else if (out.model_type == "cthmm") {
      out.cthmm = parse_cthmm(doc);
      out.cmom = cthmm_to_cmom(*out.cthmm);
    } else {
      throw ModelError("unknown model_type '" + out.model_type + "'");
    }
  } catch (const DomainError& e) {
    throw ModelError(e.what());
  }
  return out;
}

ModelDocument load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_model(text.str());
}

}  // namespace rateshift
