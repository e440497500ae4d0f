#pragma once

#include "rateshift/chain_core.hpp"
#include "rateshift/rate_change.hpp"
#include "rateshift/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <utility>

namespace rateshift {

/// Opaque hidden-signal simulator: returns a trajectory on [0, duration]
/// started from `start`, in time relative to the call. It must be a pure
/// function of its arguments and the stream state so that runs replay.
using SignalSimulator = std::function<ChainPath(StateIndex start, double duration, RngStream& rng)>;

/// Hidden Markov signal observed through a Markov chain whose rates depend on
/// the hidden state.
struct CmomModel {
  StateSpace hidden_states;
  StateSpace obs_states;
  /// Hidden generator rates lambda_{i->j} (zero diagonal). Empty when the
  /// signal is only available through `simulator`.
  std::optional<RateMatrix> lambda;
  SignalSimulator simulator;
  /// gamma_{i->j}(x): state-dependent observation rates.
  TargetRateFamily obs_rates;
  /// gamma_bar_{i->j}: reference observation rates.
  RateMatrix reference;
  Eigen::VectorXd mu;
  Eigen::VectorXd init_obs;
  /// Declared sup_x,i gamma_{i->}(x) / gamma_bar_{i->}.
  double ratio_bound = 1.0;

  int hidden_size() const noexcept { return hidden_states.size(); }
  int obs_size() const noexcept { return obs_states.size(); }
  JumpPolicy policy() const noexcept { return reference.policy(); }
  bool finite_signal() const noexcept { return lambda.has_value(); }
};

/// Continuous-time HMM: updates at rate gamma(x), each emitting symbol j with
/// probability q_j(x). Every update is an observable event.
struct CthmmModel {
  StateSpace hidden_states;
  StateSpace obs_states;
  std::optional<RateMatrix> lambda;
  SignalSimulator simulator;
  Eigen::VectorXd update_rate;     // gamma(x), one per hidden state
  Eigen::MatrixXd emission;        // row x: q(x) over obs states
  double reference_update = 1.0;   // gamma_bar
  Eigen::VectorXd reference_emission;  // q_bar
  Eigen::VectorXd mu;
  Eigen::VectorXd init_obs;

  int hidden_size() const noexcept { return hidden_states.size(); }
  int obs_size() const noexcept { return obs_states.size(); }
};

/// Checks (C1)-(C3), dominance, the declared ratio bound, the hidden
/// generator and the initial laws.
ValidationReport validate(const CmomModel& model);
/// Checks (A1)-(A3), emission normalization and emission dominance.
ValidationReport validate(const CthmmModel& model);
/// Condition (U): finite hidden Markov chain with known generator.
ValidationReport validate_for_direct_filter(const CmomModel& model);

/// gamma_{i->j}(x) = gamma(x) q_j(x), gamma_bar_{i->j} = gamma_bar q_bar_j for
/// every j including j = i (observable-update convention). ModelError on
/// dominance failure.
CmomModel cthmm_to_cmom(const CthmmModel& model);

struct JointPath {
  ChainPath hidden;
  ChainPath obs;
};

/// Hidden jumps on (start, end] from `state`, with absolute times.
std::vector<Jump> simulate_hidden_jumps(const CmomModel& model, StateIndex state, double start,
                                        double end, RngStream& rng);

/// X from its own law and Y from the reference rates, independently.
JointPath simulate_joint_reference(const CmomModel& model, double horizon, RngStream& rng);

/// X from its own law; given X, Y by thinning at rates gamma_{Y->j}(X_s).
JointPath simulate_joint_target(const CmomModel& model, double horizon, RngStream& rng);

/// Likelihood ratio of the joint target law against the reference law.
LogWeight joint_log_weight(const ChainPath& x_path, const ChainPath& y_path, const CmomModel& model,
                           std::optional<double> t = std::nullopt);

/// The CTHMM weight written directly in emission form:
/// int (gamma_bar - gamma(X_s)) ds + sum log(gamma(X) q_Y(X) / (gamma_bar q_bar_Y)).
LogWeight cthmm_log_weight(const ChainPath& x_path, const ChainPath& y_path, const CthmmModel& model,
                           std::optional<double> t = std::nullopt);

}  // namespace rateshift
