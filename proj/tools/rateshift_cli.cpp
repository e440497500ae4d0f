// rateshift command-line front end.
//
// Random streams: every command derives its streams from --seed as
// RngStream(seed, stream_key(command_id, k)) where k indexes the sample,
// path or engine run. Per-sample streams are forked, so output does not
// depend on --threads.

#include "rateshift/direct_filter.hpp"
#include "rateshift/errors.hpp"
#include "rateshift/model_io.hpp"
#include "rateshift/oracles.hpp"
#include "rateshift/parallel.hpp"
#include "rateshift/particle_filter.hpp"
#include "rateshift/rate_change.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

using namespace rateshift;
using json = nlohmann::json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kValidation = 2,
  kBudget = 3,
  kDegenerate = 4,
  kObservationMismatch = 5,
};

enum CommandId : std::uint64_t {
  kSimulate = 1,
  kRejectSample = 2,
  kWeight = 3,
  kFilter = 4,
  kCompare = 5,
};

class ObservationMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Config {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string format = "csv";
  std::string output = "-";
  std::optional<std::string> manifest;

  std::vector<std::string> models;
  std::string law = "reference";
  std::optional<double> horizon;
  std::size_t count = 1;
  std::optional<double> bound_c;
  double max_attempts = static_cast<double>(kDefaultMaxAttempts);
  std::size_t block_jumps = 0;
  std::optional<std::string> hidden_output;

  std::vector<std::string> paths;
  std::optional<std::string> hidden_path;
  std::optional<std::string> obs_path;
  std::size_t samples = 0;

  std::string engine = "direct";
  double step = 1e-2;
  std::int64_t steps_per_interval = 0;
  std::optional<double> grid_step;
  std::size_t particles = 1000;
  double r = 1.5;
  double v_halfwidth = 0.1;
  bool no_branching = false;
};

RngStream stream_for(const Config& cfg, CommandId command, std::uint64_t k) {
  return RngStream(cfg.seed, stream_key(command, k));
}

// ------------------------------------------------------------------ output

/// Numbers in a form both CSV and JSON accept; non-finite values become
/// "inf"/"-inf"/"nan" in CSV and null in JSON.
std::string num(double v, bool json_text) {
  if (std::isfinite(v)) return format_real(v);
  if (json_text) return "null";
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string json_string(const std::string& s) { return json(s).dump(); }

/// A table emitted either as CSV (header + rows) or as JSON lines. Cells
/// are pre-rendered; `quoted` marks string cells for JSON.
class Table {
 public:
  Table(std::ostream& out, bool jsonl, std::vector<std::string> columns)
      : out_(out), jsonl_(jsonl), columns_(std::move(columns)) {
    if (!jsonl_) {
      for (std::size_t k = 0; k < columns_.size(); ++k) out_ << (k ? "," : "") << columns_[k];
      out_ << '\n';
    }
  }

  bool jsonl() const { return jsonl_; }

  struct Cell {
    std::string text;
    bool quoted = false;
  };

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size()) throw UsageError("table row has the wrong width");
    if (jsonl_) {
      out_ << '{';
      for (std::size_t k = 0; k < cells.size(); ++k) {
        out_ << (k ? "," : "") << json_string(columns_[k]) << ':'
             << (cells[k].quoted ? json_string(cells[k].text) : cells[k].text);
      }
      out_ << "}\n";
    } else {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        out_ << (k ? "," : "") << (cells[k].quoted ? csv_field(cells[k].text) : cells[k].text);
      }
      out_ << '\n';
    }
  }

  Cell real(double v) const { return {num(v, jsonl_), false}; }
  Cell integer(std::uint64_t v) const { return {std::to_string(v), false}; }
  Cell text(std::string s) const { return {std::move(s), true}; }

 private:
  std::ostream& out_;
  bool jsonl_;
  std::vector<std::string> columns_;
};

/// Output sink: stdout for "-", else a file opened for binary write.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*file_) throw std::runtime_error("cannot open output file '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void write_path(std::ostream& out, const ChainPath& path, const StateSpace& states, bool jsonl) {
  if (!jsonl) {
    write_path_csv(out, path, states);
    return;
  }
  Table t(out, true, {"time", "state"});
  t.row({t.real(0.0), t.text(states.label(path.initial_state()))});
  for (const Jump& j : path.jumps()) t.row({t.real(j.time), t.text(states.label(j.state))});
}

std::string indexed_path(const std::string& base, std::size_t k, std::size_t count) {
  if (count == 1) return base;
  const std::filesystem::path p(base);
  return (p.parent_path() / (p.stem().string() + "-" + std::to_string(k) + p.extension().string())).string();
}

void write_manifest(const std::optional<std::string>& path, const json& doc) {
  if (!path) return;
  std::ofstream out(*path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open manifest file '" + *path + "'");
  out << doc.dump(2) << '\n';
}

std::optional<std::string> manifest_path(const Config& cfg) {
  if (cfg.manifest) return cfg.manifest;
  if (cfg.output != "-") return cfg.output + ".manifest.json";
  return std::nullopt;
}

// ------------------------------------------------------------------- input

ModelDocument load(const std::string& path) { return load_model(path); }

const CmomModel& require_cmom(const ModelDocument& doc, const std::string& what) {
  if (!doc.cmom) throw UsageError(what + " needs a cmom or cthmm model");
  return *doc.cmom;
}

const ChainModel& require_chain(const ModelDocument& doc, const std::string& what) {
  if (!doc.chain) throw UsageError(what + " needs a chain model");
  return *doc.chain;
}

void require_valid(const ValidationReport& report) {
  if (report.ok()) return;
  std::string msg = "model validation failed:";
  for (const Violation& v : report.violations) msg += " [" + v.condition + "] " + v.detail + ";";
  throw ValidationFailure(msg);
}

ValidationReport model_report(const ModelDocument& doc) {
  ValidationReport report;
  if (doc.chain) report.merge(validate(doc.chain->reference, doc.chain->target));
  if (doc.cthmm) report.merge(validate(*doc.cthmm));
  if (doc.cmom) report.merge(validate(*doc.cmom));
  return report;
}

/// Reads a path CSV over `states`. Labels outside the state space are an
/// observation-space mismatch rather than a malformed file.
ChainPath read_path(const std::string& file, const StateSpace& states, std::optional<double> horizon,
                    JumpPolicy policy) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open path file '" + file + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::unordered_set<std::string> known(states.labels().begin(), states.labels().end());
  std::istringstream scan(text);
  std::string line;
  std::getline(scan, line);
  while (std::getline(scan, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const std::string label = line.substr(comma + 1);
    if (!known.contains(label)) {
      throw ObservationMismatch("path '" + file + "' uses state '" + label + "' outside the model's state space");
    }
  }
  std::istringstream parse(text);
  return read_path_csv(parse, states, horizon, policy);
}

// ---------------------------------------------------------------- commands

int cmd_simulate(const Config& cfg) {
  if (cfg.models.size() != 1) throw UsageError("simulate takes exactly one --model");
  if (!cfg.horizon) throw UsageError("simulate needs --T");
  if (cfg.count == 0) throw UsageError("--count must be positive");
  if (cfg.count > 1 && cfg.output == "-") throw UsageError("--count > 1 needs an --output file");
  const ModelDocument doc = load(cfg.models.front());
  require_valid(model_report(doc));
  const double horizon = *cfg.horizon;
  const bool jsonl = cfg.format == "jsonl";
  const auto max_attempts = static_cast<std::uint64_t>(cfg.max_attempts);

  struct Result {
    ChainPath obs{0, {}, 0.0};
    std::optional<ChainPath> hidden;
    std::uint64_t attempts = 0;
  };
  std::vector<Result> results(cfg.count);
  std::optional<double> used_c;

  if (doc.chain) {
    const ChainModel& m = *doc.chain;
    double c = 0.0;
    double thinning_bound = 0.0;
    if (cfg.law == "target-rejection") {
      if (cfg.bound_c) {
        c = *cfg.bound_c;
      } else if (const auto certified = certified_rejection_bound(m.reference, m.target, horizon)) {
        c = *certified;
      } else {
        throw ValidationFailure("no certified rejection bound for this target; pass --C");
      }
      used_c = c;
    } else if (cfg.law == "target-thinning") {
      thinning_bound = bounded_transitions_constant(m.reference, m.target);
    } else if (cfg.law != "reference") {
      throw UsageError("law '" + cfg.law + "' is not available for chain models");
    }
    parallel_for(cfg.count, cfg.threads, [&](std::size_t k) {
      RngStream rng = stream_for(cfg, kSimulate, k);
      if (cfg.law == "reference") {
        results[k].obs = simulate_reference_chain(m.reference, m.init, horizon, rng);
        results[k].attempts = 1;
      } else if (cfg.law == "target-thinning") {
        const StateIndex y0 = sample_initial(m.init, rng);
        results[k].obs =
            simulate_target_by_thinning(m.target, m.reference, thinning_bound, y0, horizon, Driver::time(), rng);
        results[k].attempts = 1;
      } else {
        RejectionResult r = rejection_sample(m.reference, m.target, c, m.init, horizon, rng, max_attempts);
        results[k].obs = std::move(r.path);
        results[k].attempts = r.attempts;
      }
    });
  } else {
    const CmomModel& m = require_cmom(doc, "simulate");
    if (cfg.law != "reference" && cfg.law != "joint-target") {
      throw UsageError("law '" + cfg.law + "' is not available for " + doc.model_type + " models");
    }
    parallel_for(cfg.count, cfg.threads, [&](std::size_t k) {
      RngStream rng = stream_for(cfg, kSimulate, k);
      JointPath p = cfg.law == "reference" ? simulate_joint_reference(m, horizon, rng)
                                           : simulate_joint_target(m, horizon, rng);
      results[k].obs = std::move(p.obs);
      results[k].hidden = std::move(p.hidden);
      results[k].attempts = 1;
    });
  }

  const StateSpace& obs_states = doc.chain ? doc.chain->states : doc.cmom->obs_states;
  json outputs = json::array();
  json attempts = json::array();
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < cfg.count; ++k) {
    const std::string file = indexed_path(cfg.output, k, cfg.count);
    Sink sink(file);
    write_path(sink.stream(), results[k].obs, obs_states, jsonl);
    sink.stream().flush();
    json entry = {{"path", file}, {"jumps", results[k].obs.size()}};
    if (cfg.hidden_output && results[k].hidden) {
      const std::string hidden_file = indexed_path(*cfg.hidden_output, k, cfg.count);
      Sink hidden_sink(hidden_file);
      write_path(hidden_sink.stream(), *results[k].hidden, doc.cmom->hidden_states, jsonl);
      entry["hidden_path"] = hidden_file;
    }
    outputs.push_back(entry);
    attempts.push_back(results[k].attempts);
    total += results[k].attempts;
  }

  json manifest = {{"command", "simulate"},       {"law", cfg.law},
                   {"seed", cfg.seed},            {"model_hash", doc.hash},
                   {"model_type", doc.model_type}, {"horizon", horizon},
                   {"count", cfg.count},          {"attempts", attempts},
                   {"total_attempts", total},     {"outputs", outputs},
                   {"format", cfg.format}};
  if (used_c) {
    manifest["C"] = *used_c;
    manifest["max_attempts"] = max_attempts;
  }
  write_manifest(manifest_path(cfg), manifest);
  return kOk;
}

int cmd_reject_sample(const Config& cfg) {
  if (cfg.models.size() != 1) throw UsageError("reject-sample takes exactly one --model");
  if (!cfg.horizon) throw UsageError("reject-sample needs --T");
  const ModelDocument doc = load(cfg.models.front());
  const ChainModel& m = require_chain(doc, "reject-sample");
  require_valid(model_report(doc));
  const double horizon = *cfg.horizon;
  const auto max_attempts = static_cast<std::uint64_t>(cfg.max_attempts);
  const bool segmented = cfg.block_jumps > 0;

  std::optional<double> c = cfg.bound_c;
  if (!segmented && !c) c = certified_rejection_bound(m.reference, m.target, horizon);
  if (!segmented && !c) throw ValidationFailure("no certified rejection bound for this target; pass --C");
  if (segmented) require_valid(check_bounded_transitions(m.reference, m.target,
                                                         bounded_transitions_constant(m.reference, m.target)));

  struct Result {
    std::uint64_t attempts = 0;
    std::size_t jumps = 0;
    StateIndex final_state = 0;
  };
  std::vector<Result> results(cfg.count);
  parallel_for(cfg.count, cfg.threads, [&](std::size_t k) {
    RngStream rng = stream_for(cfg, kRejectSample, k);
    if (segmented) {
      const SegmentedRejectionResult r =
          segmented_rejection_sample(m.reference, m.target, cfg.block_jumps, m.init, horizon, rng, max_attempts);
      results[k] = {r.attempts, r.path.size(), r.path.final_state()};
    } else {
      const RejectionResult r = rejection_sample(m.reference, m.target, *c, m.init, horizon, rng, max_attempts);
      results[k] = {r.attempts, r.path.size(), r.path.final_state()};
    }
  });

  Sink sink(cfg.output);
  Table t(sink.stream(), cfg.format == "jsonl", {"sample", "attempts", "jumps", "final_state"});
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < cfg.count; ++k) {
    t.row({t.integer(k), t.integer(results[k].attempts), t.integer(results[k].jumps),
           t.text(m.states.label(results[k].final_state))});
    total += results[k].attempts;
  }

  json manifest = {{"command", "reject-sample"}, {"seed", cfg.seed},          {"model_hash", doc.hash},
                   {"horizon", horizon},          {"accepted", cfg.count},     {"total_attempts", total},
                   {"max_attempts", max_attempts}, {"segmented", segmented}};
  if (total > 0) {
    const double rate = static_cast<double>(cfg.count) / static_cast<double>(total);
    manifest["acceptance_rate"] = rate;
  }
  if (c) manifest["C"] = *c;
  if (segmented) manifest["block_jumps"] = cfg.block_jumps;
  write_manifest(manifest_path(cfg), manifest);
  return kOk;
}

int cmd_weight(const Config& cfg) {
  if (cfg.models.size() != 1) throw UsageError("weight takes exactly one --model");
  const ModelDocument doc = load(cfg.models.front());
  require_valid(model_report(doc));
  Sink sink(cfg.output);
  const bool jsonl = cfg.format == "jsonl";

  if (cfg.samples > 0) {
    if (!cfg.horizon) throw UsageError("weight --samples needs --T");
    std::vector<double> w(cfg.samples);
    if (doc.chain) {
      const ChainModel& m = *doc.chain;
      parallel_for(cfg.samples, cfg.threads, [&](std::size_t k) {
        RngStream rng = stream_for(cfg, kWeight, k);
        const ChainPath p = simulate_reference_chain(m.reference, m.init, *cfg.horizon, rng);
        w[k] = log_weight(p, m.target, m.reference).value();
      });
    } else {
      const CmomModel& m = require_cmom(doc, "weight");
      parallel_for(cfg.samples, cfg.threads, [&](std::size_t k) {
        RngStream rng = stream_for(cfg, kWeight, k);
        const JointPath p = simulate_joint_reference(m, *cfg.horizon, rng);
        w[k] = joint_log_weight(p.hidden, p.obs, m).value();
      });
    }
    const Estimate e = mean_and_stderr(w);
    Table t(sink.stream(), jsonl, {"samples", "mean_weight", "std_error"});
    t.row({t.integer(cfg.samples), t.real(e.value), t.real(e.std_error)});
    return kOk;
  }

  Table t(sink.stream(), jsonl, {"path", "log_weight", "weight"});
  if (doc.chain) {
    const ChainModel& m = *doc.chain;
    if (cfg.paths.empty()) throw UsageError("weight needs --path files or --samples");
    for (std::size_t k = 0; k < cfg.paths.size(); ++k) {
      const ChainPath p = read_path(cfg.paths[k], m.states, cfg.horizon, m.reference.policy());
      const LogWeight lw = log_weight(p, m.target, m.reference);
      t.row({t.text(cfg.paths[k]), t.real(lw.log_a), t.real(lw.value())});
    }
  } else {
    const CmomModel& m = require_cmom(doc, "weight");
    if (!cfg.hidden_path || !cfg.obs_path) throw UsageError("weight on a cmom model needs --hidden and --obs");
    const ChainPath y = read_path(*cfg.obs_path, m.obs_states, cfg.horizon, m.policy());
    const ChainPath x = read_path(*cfg.hidden_path, m.hidden_states, y.horizon(), JumpPolicy::state_changes);
    const LogWeight lw = joint_log_weight(x, y, m);
    t.row({t.text(*cfg.obs_path), t.real(lw.log_a), t.real(lw.value())});
  }
  return kOk;
}

DirectFilterOptions direct_options(const Config& cfg) {
  if (!(cfg.step > 0.0)) throw UsageError("--h must be positive");
  if (cfg.steps_per_interval < 0) throw UsageError("--nt must be positive");
  DirectFilterOptions o;
  o.step = cfg.step;
  o.steps_per_interval = cfg.steps_per_interval;
  return o;
}

ParticleRunOptions particle_options(const Config& cfg) {
  if (cfg.particles == 0) throw UsageError("--particles must be positive");
  ParticleRunOptions o;
  o.particles = cfg.particles;
  o.branching = {cfg.r, cfg.v_halfwidth};
  o.branching_enabled = !cfg.no_branching;
  o.threads = cfg.threads;
  return o;
}

std::vector<std::string> indexed_columns(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int k = 1; k <= n; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

int cmd_filter(const Config& cfg) {
  if (cfg.models.size() != 1) throw UsageError("filter takes exactly one --model");
  if (!cfg.obs_path) throw UsageError("filter needs --obs");
  const ModelDocument doc = load(cfg.models.front());
  const CmomModel& m = require_cmom(doc, "filter");
  require_valid(model_report(doc));
  const ChainPath y = read_path(*cfg.obs_path, m.obs_states, cfg.horizon, m.policy());
  const int size = m.hidden_size();
  Sink sink(cfg.output);
  const bool jsonl = cfg.format == "jsonl";

  if (cfg.engine == "direct") {
    require_valid(validate_for_direct_filter(m));
    std::vector<double> grid;
    if (cfg.grid_step) {
      if (!(*cfg.grid_step > 0.0)) throw UsageError("--grid-step must be positive");
      for (std::size_t k = 1;; ++k) {
        const double g = static_cast<double>(k) * *cfg.grid_step;
        if (g > y.horizon()) break;
        grid.push_back(g);
      }
    }
    const std::vector<DirectRecord> recs = run_direct_filter(m, y, grid, direct_options(cfg));
    if (jsonl) {
      std::ostream& out = sink.stream();
      for (const DirectRecord& r : recs) {
        const Eigen::VectorXd sigma = r.filter.true_sigma();
        const Eigen::VectorXd pi = r.pi();
        out << "{\"t\":" << num(r.t, true) << ",\"event\":\"" << (r.event == RecordEvent::jump ? "jump" : "grid")
            << "\",\"sigma\":[";
        for (int k = 0; k < size; ++k) out << (k ? "," : "") << num(sigma(k), true);
        out << "],\"log_sigma_total\":" << num(r.log_sigma_total(), true) << ",\"pi\":[";
        for (int k = 0; k < size; ++k) out << (k ? "," : "") << num(pi(k), true);
        out << "]}\n";
      }
    } else {
      std::vector<std::string> cols{"t", "event"};
      for (const auto& c : indexed_columns("sigma_", size)) cols.push_back(c);
      cols.push_back("log_sigma_total");
      for (const auto& c : indexed_columns("pi_", size)) cols.push_back(c);
      Table t(sink.stream(), false, cols);
      for (const DirectRecord& r : recs) {
        const Eigen::VectorXd sigma = r.filter.true_sigma();
        const Eigen::VectorXd pi = r.pi();
        std::vector<Table::Cell> row{t.real(r.t), t.text(r.event == RecordEvent::jump ? "jump" : "grid")};
        for (int k = 0; k < size; ++k) row.push_back(t.real(sigma(k)));
        row.push_back(t.real(r.log_sigma_total()));
        for (int k = 0; k < size; ++k) row.push_back(t.real(pi(k)));
        t.row(row);
      }
    }
    return kOk;
  }
  if (cfg.engine != "particle") throw UsageError("--engine must be particle or direct");

  const ParticleRun run = run_particle_filter(m, y, particle_options(cfg), stream_for(cfg, kFilter, 0));
  if (jsonl) {
    std::ostream& out = sink.stream();
    for (const ParticleRecord& r : run.records) {
      out << "{\"t\":" << num(r.t, true) << ",\"particle_count\":" << r.particle_count
          << ",\"sn_one\":" << num(std::exp(r.log_sn_one), true) << ",\"log_sn_one\":" << num(r.log_sn_one, true)
          << ",\"pi\":[";
      for (int k = 0; k < size; ++k) out << (k ? "," : "") << num(r.pi(k), true);
      out << "]}\n";
    }
  } else {
    std::vector<std::string> cols{"t", "particle_count", "sn_one", "log_sn_one"};
    for (const auto& c : indexed_columns("pi_", size)) cols.push_back(c);
    Table t(sink.stream(), false, cols);
    for (const ParticleRecord& r : run.records) {
      std::vector<Table::Cell> row{t.real(r.t), t.integer(r.particle_count), t.real(std::exp(r.log_sn_one)),
                                   t.real(r.log_sn_one)};
      for (int k = 0; k < size; ++k) row.push_back(t.real(r.pi(k)));
      t.row(row);
    }
  }
  return kOk;
}

int cmd_compare(const Config& cfg) {
  if (cfg.models.size() < 2) throw UsageError("compare needs at least two --model files");
  if (!cfg.obs_path) throw UsageError("compare needs --obs");
  std::vector<ModelDocument> docs;
  for (const std::string& f : cfg.models) {
    docs.push_back(load(f));
    require_cmom(docs.back(), "compare");
    require_valid(model_report(docs.back()));
  }
  const CmomModel& first = *docs.front().cmom;
  for (const ModelDocument& d : docs) {
    if (d.cmom->obs_states != first.obs_states || d.cmom->policy() != first.policy()) {
      throw ObservationMismatch("models disagree on the observation space");
    }
  }
  const ChainPath y = read_path(*cfg.obs_path, first.obs_states, cfg.horizon, first.policy());

  const std::size_t n = docs.size();
  std::vector<double> log_total(n);
  if (cfg.engine == "direct") {
    const DirectFilterOptions o = direct_options(cfg);
    for (std::size_t k = 0; k < n; ++k) {
      require_valid(validate_for_direct_filter(*docs[k].cmom));
      log_total[k] = direct_log_likelihood(*docs[k].cmom, y, o);
    }
  } else if (cfg.engine == "particle") {
    // common random numbers: every model runs on the same stream
    const ParticleRunOptions o = particle_options(cfg);
    for (std::size_t k = 0; k < n; ++k) {
      log_total[k] = log_unnormalized_total(
          run_particle_filter(*docs[k].cmom, y, o, stream_for(cfg, kCompare, 0)).final_ensemble);
    }
  } else {
    throw UsageError("--engine must be particle or direct");
  }

  Sink sink(cfg.output);
  const bool jsonl = cfg.format == "jsonl";
  if (jsonl) {
    std::ostream& out = sink.stream();
    for (std::size_t a = 0; a < n; ++a) {
      out << "{\"model\":" << a + 1 << ",\"hash\":" << json_string(docs[a].hash)
          << ",\"log_sigma_total\":" << num(log_total[a], true) << ",\"bayes_factor\":[";
      for (std::size_t b = 0; b < n; ++b) out << (b ? "," : "") << num(std::exp(log_total[a] - log_total[b]), true);
      out << "]}\n";
    }
  } else {
    std::vector<std::string> cols{"model", "hash", "log_sigma_total"};
    for (std::size_t b = 1; b <= n; ++b) cols.push_back("bf_" + std::to_string(b));
    Table t(sink.stream(), false, cols);
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<Table::Cell> row{t.integer(a + 1), t.text(docs[a].hash), t.real(log_total[a])};
      for (std::size_t b = 0; b < n; ++b) row.push_back(t.real(std::exp(log_total[a] - log_total[b])));
      t.row(row);
    }
  }
  return kOk;
}

int cmd_validate(const Config& cfg) {
  if (cfg.models.size() != 1) throw UsageError("validate takes exactly one --model");
  const ModelDocument doc = load(cfg.models.front());
  Sink sink(cfg.output);
  Table t(sink.stream(), cfg.format == "jsonl", {"check", "condition", "detail"});
  bool ok = true;
  auto emit = [&](const std::string& check, const ValidationReport& report) {
    for (const Violation& v : report.violations) t.row({t.text(check), t.text(v.condition), t.text(v.detail)});
    ok = ok && report.ok();
  };
  emit("model", model_report(doc));
  if (doc.cmom) emit("direct_filter", validate_for_direct_filter(*doc.cmom));
  return ok ? kOk : kValidation;
}

// -------------------------------------------------------------------- main

void add_common(CLI::App* sub, Config& cfg) {
  sub->add_option("--seed", cfg.seed, "Master seed for every random stream")->required();
  sub->add_option("--threads", cfg.threads, "Upper bound on worker threads")
      ->check(CLI::Range(1u, 1024u));
  sub->add_option("--format", cfg.format, "Record format")->check(CLI::IsMember({"csv", "jsonl"}));
  sub->add_option("-o,--output", cfg.output, "Output file, '-' for stdout");
}

void add_model(CLI::App* sub, Config& cfg, bool many) {
  auto* opt = sub->add_option("--model", cfg.models, many ? "Model JSON files" : "Model JSON file")->required();
  if (!many) opt->expected(1);
  opt->check(CLI::ExistingFile);
}

void add_filter_options(CLI::App* sub, Config& cfg) {
  sub->add_option("--obs", cfg.obs_path, "Observation path CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--T", cfg.horizon, "Horizon (defaults to the last observation time)");
  sub->add_option("--engine", cfg.engine, "Filter engine")->check(CLI::IsMember({"direct", "particle"}));
  sub->add_option("--h", cfg.step, "Direct engine: Trotter step size");
  sub->add_option("--nt", cfg.steps_per_interval, "Direct engine: fixed Trotter steps per interval (overrides --h)");
  sub->add_option("--particles", cfg.particles, "Particle engine: initial particle count N");
  sub->add_option("--r", cfg.r, "Particle engine: branching threshold r > 1");
  sub->add_option("--v-halfwidth", cfg.v_halfwidth, "Particle engine: smoothing uniform half-width");
  sub->add_flag("--no-branching", cfg.no_branching, "Particle engine: weighted filter without branching");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rate-change sampling, filtering and model comparison for continuous-time Markov chains"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  Config cfg;

  auto* simulate = app.add_subcommand("simulate", "Simulate paths and write them with a manifest");
  add_common(simulate, cfg);
  add_model(simulate, cfg, false);
  simulate->add_option("--law", cfg.law, "reference | target-thinning | target-rejection | joint-target")
      ->check(CLI::IsMember({"reference", "target-thinning", "target-rejection", "joint-target"}));
  simulate->add_option("--T", cfg.horizon, "Horizon")->required();
  simulate->add_option("--count", cfg.count, "Number of independent paths");
  simulate->add_option("--C", cfg.bound_c, "Rejection bound (defaults to the certified bound)");
  simulate->add_option("--max-attempts", cfg.max_attempts, "Rejection attempt budget per path");
  simulate->add_option("--hidden-output", cfg.hidden_output, "Where to write hidden paths (cmom models)");
  simulate->add_option("--manifest", cfg.manifest, "Manifest JSON (defaults to <output>.manifest.json)");

  auto* reject = app.add_subcommand("reject-sample", "Rejection sampling with attempt statistics");
  add_common(reject, cfg);
  add_model(reject, cfg, false);
  reject->add_option("--T", cfg.horizon, "Horizon")->required();
  reject->add_option("--count", cfg.count, "Number of accepted paths");
  reject->add_option("--C", cfg.bound_c, "Rejection bound (defaults to the certified bound)");
  reject->add_option("--max-attempts", cfg.max_attempts, "Attempt budget per accepted path");
  reject->add_option("--block-jumps", cfg.block_jumps, "Segmented rejection with this many jumps per block");
  reject->add_option("--manifest", cfg.manifest, "Summary JSON (defaults to <output>.manifest.json)");

  auto* weight = app.add_subcommand("weight", "Likelihood ratio of given paths, or its mean over reference draws");
  add_common(weight, cfg);
  add_model(weight, cfg, false);
  weight->add_option("--path", cfg.paths, "Chain model: path CSV files")->check(CLI::ExistingFile);
  weight->add_option("--hidden", cfg.hidden_path, "CMOM model: hidden path CSV")->check(CLI::ExistingFile);
  weight->add_option("--obs", cfg.obs_path, "CMOM model: observation path CSV")->check(CLI::ExistingFile);
  weight->add_option("--T", cfg.horizon, "Horizon");
  weight->add_option("--samples", cfg.samples, "Estimate E[A_T] from this many reference draws");

  auto* filter = app.add_subcommand("filter", "Run the particle or direct filter on an observation path");
  add_common(filter, cfg);
  add_model(filter, cfg, false);
  add_filter_options(filter, cfg);
  filter->add_option("--grid-step", cfg.grid_step, "Direct engine: extra output grid spacing");

  auto* compare = app.add_subcommand("compare", "Bayes factors between models on one observation path");
  add_common(compare, cfg);
  add_model(compare, cfg, true);
  add_filter_options(compare, cfg);

  auto* validate_cmd = app.add_subcommand("validate", "Check a model document");
  add_common(validate_cmd, cfg);
  add_model(validate_cmd, cfg, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    std::cout << std::flush;
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (reject->parsed()) return cmd_reject_sample(cfg);
    if (weight->parsed()) return cmd_weight(cfg);
    if (filter->parsed()) return cmd_filter(cfg);
    if (compare->parsed()) return cmd_compare(cfg);
    if (validate_cmd->parsed()) return cmd_validate(cfg);
  } catch (const BudgetError& e) {
    std::cerr << "budget exhausted after " << e.attempts() << " attempts (acceptance estimate "
              << e.acceptance_estimate() << "): " << e.what() << '\n';
    return kBudget;
  } catch (const DegenerateFilterError& e) {
    std::cerr << "degenerate filter: " << e.what() << '\n';
    return kDegenerate;
  } catch (const ObservationMismatch& e) {
    std::cerr << "observation space mismatch: " << e.what() << '\n';
    return kObservationMismatch;
  } catch (const BoundViolationError& e) {
    std::cerr << "bound violation: observed " << e.observed() << " above " << e.bound() << ": " << e.what() << '\n';
    return kValidation;
  } catch (const ValidationFailure& e) {
    std::cerr << e.what() << '\n';
    return kValidation;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kValidation;
  } catch (const AbsoluteContinuityError& e) {
    std::cerr << "absolute continuity: " << e.what() << '\n';
    return kValidation;
  } catch (const DomainError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
