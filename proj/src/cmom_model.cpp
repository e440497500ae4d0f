#include "rateshift/cmom_model.hpp"

#include "rateshift/errors.hpp"

#include <cmath>
#include <limits>

namespace rateshift {

namespace {

void check_probability(ValidationReport& report, const Eigen::VectorXd& p, int expected,
                       const std::string& what) {
  if (p.size() != expected) {
    report.add("C1", what + " has " + std::to_string(p.size()) + " entries, expected " + std::to_string(expected));
    return;
  }
  if ((p.array() < 0.0).any() || !p.allFinite()) report.add("C1", what + " has negative or non-finite entries");
  if (std::abs(p.sum() - 1.0) > 1e-12) report.add("C1", what + " does not sum to 1");
}

void check_signal(ValidationReport& report, const StateSpace& hidden,
                  const std::optional<RateMatrix>& lambda, const SignalSimulator& simulator) {
  if (lambda) {
    if (lambda->size() != hidden.size()) report.add("U", "hidden generator size does not match hidden states");
    if (lambda->policy() != JumpPolicy::state_changes) report.add("U", "hidden generator must have zero diagonal");
  } else if (!simulator) {
    report.add("U", "hidden signal has neither a generator nor a simulator");
  }
}

}  // namespace

ValidationReport validate(const CmomModel& model) {
  ValidationReport report;
  check_signal(report, model.hidden_states, model.lambda, model.simulator);
  if (model.obs_rates.kind() != RateKind::state_dependent) {
    report.add("C2", "observation rates must be hidden-state dependent");
    return report;
  }
  if (model.obs_rates.hidden_size() != model.hidden_size()) {
    report.add("C2", "observation rate tables do not cover every hidden state");
    return report;
  }
  if (model.obs_rates.size() != model.obs_size() || model.reference.size() != model.obs_size()) {
    report.add("C1", "observation rate tables do not match the observation space");
    return report;
  }
  report.merge(validate(model.reference, model.obs_rates.with_ratio_bound(model.ratio_bound)));
  check_probability(report, model.mu, model.hidden_size(), "mu");
  check_probability(report, model.init_obs, model.obs_size(), "init_obs");
  return report;
}

ValidationReport validate(const CthmmModel& model) {
  ValidationReport report;
  check_signal(report, model.hidden_states, model.lambda, model.simulator);
  const int m = model.hidden_size();
  const int o = model.obs_size();
  if (o == 0) report.add("A1", "observation space is empty");
  if (model.update_rate.size() != m || model.emission.rows() != m || model.emission.cols() != o ||
      model.reference_emission.size() != o) {
    report.add("A1", "update rates or emission tables have the wrong shape");
    return report;
  }
  if (!model.update_rate.allFinite()) report.add("A2", "update rate is not bounded");
  for (int x = 0; x < m; ++x) {
    if (!(model.update_rate(x) > 0.0)) report.add("A3", "update rate of hidden state " + std::to_string(x) + " is not positive");
    if ((model.emission.row(x).array() < 0.0).any() || std::abs(model.emission.row(x).sum() - 1.0) > 1e-12) {
      report.add("A1", "emission law of hidden state " + std::to_string(x) + " is not a probability vector");
    }
    for (int j = 0; j < o; ++j) {
      if (model.emission(x, j) > 0.0 && !(model.reference_emission(j) > 0.0)) {
        report.add("dominance", "emission " + std::to_string(j) + " possible under hidden state " +
                                    std::to_string(x) + " but not under the reference");
      }
    }
  }
  if (!(model.reference_update > 0.0) || !std::isfinite(model.reference_update)) {
    report.add("A3", "reference update rate must be positive and finite");
  }
  if ((model.reference_emission.array() < 0.0).any() || std::abs(model.reference_emission.sum() - 1.0) > 1e-12) {
    report.add("A1", "reference emission law is not a probability vector");
  }
  check_probability(report, model.mu, m, "mu");
  check_probability(report, model.init_obs, o, "init_obs");
  return report;
}

ValidationReport validate_for_direct_filter(const CmomModel& model) {
  ValidationReport report = validate(model);
  if (!model.finite_signal()) report.add("U", "direct filter needs a finite hidden chain with a known generator");
  return report;
}

CmomModel cthmm_to_cmom(const CthmmModel& model) {
  const ValidationReport report = validate(model);
  if (!report.ok()) {
    throw ModelError("CTHMM fails validation: " + report.violations.front().condition + ": " +
                     report.violations.front().detail);
  }
  const int m = model.hidden_size();
  const int o = model.obs_size();
  std::vector<Eigen::MatrixXd> per_hidden;
  per_hidden.reserve(static_cast<std::size_t>(m));
  double ratio = 0.0;
  for (int x = 0; x < m; ++x) {
    Eigen::RowVectorXd row = model.update_rate(x) * model.emission.row(x);
    per_hidden.emplace_back(row.replicate(o, 1));
    ratio = std::max(ratio, model.update_rate(x) / model.reference_update);
  }
  Eigen::RowVectorXd ref_row = model.reference_update * model.reference_emission.transpose();
  return CmomModel{
      .hidden_states = model.hidden_states,
      .obs_states = model.obs_states,
      .lambda = model.lambda,
      .simulator = model.simulator,
      .obs_rates = TargetRateFamily::state_dependent(std::move(per_hidden), JumpPolicy::observable_updates),
      .reference = RateMatrix(ref_row.replicate(o, 1), JumpPolicy::observable_updates),
      .mu = model.mu,
      .init_obs = model.init_obs,
      .ratio_bound = ratio,
  };
}

std::vector<Jump> simulate_hidden_jumps(const CmomModel& model, StateIndex state, double start,
                                        double end, RngStream& rng) {
  if (model.lambda) return simulate_reference_jumps(*model.lambda, state, start, end, rng);
  if (!model.simulator) throw UsageError("hidden signal has neither a generator nor a simulator");
  const ChainPath segment = model.simulator(state, end - start, rng);
  if (segment.initial_state() != state) throw UsageError("signal simulator did not start from the requested state");
  std::vector<Jump> jumps;
  jumps.reserve(segment.size());
  for (const Jump& j : segment.jumps()) jumps.push_back({start + j.time, j.state});
  return jumps;
}

namespace {

ChainPath simulate_hidden(const CmomModel& model, double horizon, RngStream& rng) {
  const StateIndex x0 = sample_initial(model.mu, rng);
  return ChainPath(x0, simulate_hidden_jumps(model, x0, 0.0, horizon, rng), horizon);
}

}  // namespace

JointPath simulate_joint_reference(const CmomModel& model, double horizon, RngStream& rng) {
  ChainPath x = simulate_hidden(model, horizon, rng);
  ChainPath y = simulate_reference_chain(model.reference, model.init_obs, horizon, rng);
  return {std::move(x), std::move(y)};
}

JointPath simulate_joint_target(const CmomModel& model, double horizon, RngStream& rng) {
  ChainPath x = simulate_hidden(model, horizon, rng);
  const StateIndex y0 = sample_initial(model.init_obs, rng);
  ChainPath y = simulate_target_by_thinning(model.obs_rates, model.reference, model.ratio_bound, y0,
                                            horizon, Driver::hidden_path(x), rng);
  return {std::move(x), std::move(y)};
}

LogWeight joint_log_weight(const ChainPath& x_path, const ChainPath& y_path, const CmomModel& model,
                           std::optional<double> t) {
  return log_weight(y_path, model.obs_rates, model.reference, Driver::hidden_path(x_path), t);
}

LogWeight cthmm_log_weight(const ChainPath& x_path, const ChainPath& y_path, const CthmmModel& model,
                           std::optional<double> t) {
  const double end = t.value_or(y_path.horizon());
  if (end > x_path.horizon()) throw DomainError("hidden path shorter than the weighting horizon");
  // integral term, split at hidden jumps
  double log_a = 0.0;
  double s = 0.0;
  StateIndex x = x_path.initial_state();
  for (const Jump& j : x_path.jumps()) {
    if (j.time > end) break;
    log_a += (model.reference_update - model.update_rate(x)) * (j.time - s);
    s = j.time;
    x = j.state;
  }
  log_a += (model.reference_update - model.update_rate(x)) * (end - s);
  // one factor per observed update event
  for (const Jump& j : y_path.jumps()) {
    if (j.time > end) break;
    const StateIndex xs = path_state_at(x_path, j.time);
    const double num = model.update_rate(xs) * model.emission(xs, j.state);
    const double den = model.reference_update * model.reference_emission(j.state);
    if (!(den > 0.0)) throw AbsoluteContinuityError("observed emission has zero reference probability");
    log_a += num == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(num / den);
  }
  return {log_a, end};
}

}  // namespace rateshift
