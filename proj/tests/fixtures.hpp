#pragma once

#include "rateshift/chain_core.hpp"
#include "rateshift/cmom_model.hpp"
#include "rateshift/rng.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fixtures {

using namespace rateshift;

inline Eigen::MatrixXd mat2(double a, double b, double c, double d) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

/// 2 hidden x 2 observation states: hidden state 0 makes observation 0 -> 1
/// slow and 1 -> 0 fast, hidden state 1 the opposite.
inline CmomModel benchmark_2x2() {
  return CmomModel{
      .hidden_states = StateSpace::indexed(2),
      .obs_states = StateSpace::indexed(2),
      .lambda = RateMatrix(mat2(0.0, 0.5, 0.8, 0.0)),
      .simulator = {},
      .obs_rates = TargetRateFamily::state_dependent({mat2(0.0, 0.5, 2.0, 0.0), mat2(0.0, 2.0, 0.5, 0.0)}),
      .reference = RateMatrix(mat2(0.0, 1.0, 1.0, 0.0)),
      .mu = vec({0.6, 0.4}),
      .init_obs = vec({1.0, 0.0}),
      .ratio_bound = 2.0,
  };
}

/// Observation path of the benchmark on [0, 5], drawn from the target law.
inline ChainPath benchmark_observation(std::uint64_t seed = 2024, double horizon = 5.0) {
  RngStream rng(seed, 0);
  return simulate_joint_target(benchmark_2x2(), horizon, rng).obs;
}

/// 4-state hidden chain with observation rates equal to the reference.
inline CmomModel reference_4x2() {
  Eigen::MatrixXd lam(4, 4);
  lam << 0.0, 0.7, 0.2, 0.0,
         0.3, 0.0, 0.4, 0.5,
         0.0, 0.6, 0.0, 0.9,
         1.1, 0.0, 0.2, 0.0;
  const Eigen::MatrixXd ref = mat2(0.0, 1.3, 0.7, 0.0);
  return CmomModel{
      .hidden_states = StateSpace::indexed(4),
      .obs_states = StateSpace::indexed(2),
      .lambda = RateMatrix(lam),
      .simulator = {},
      .obs_rates = TargetRateFamily::state_dependent({ref, ref, ref, ref}),
      .reference = RateMatrix(ref),
      .mu = vec({0.1, 0.2, 0.3, 0.4}),
      .init_obs = vec({0.5, 0.5}),
      .ratio_bound = 1.0,
  };
}

}  // namespace fixtures
