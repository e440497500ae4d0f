#pragma once

// Finite-state solver for the unnormalized filter sigma_t of a CMOM whose
// hidden signal is a finite Markov chain. Between observation events sigma
// follows a linear ODE whose semigroup is approximated by a Trotter product
// of the hidden transition function and a diagonal reweighting; at each
// observation event sigma is multiplied entrywise by the jump ratio.

#include "rateshift/chain_core.hpp"
#include "rateshift/cmom_model.hpp"
#include "rateshift/errors.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rateshift {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// sigma_t as point masses, stored as sigma * exp(log_scale) so that the
/// total mass can drift over many orders of magnitude.
template <typename Scalar>
struct BasicFilterVector {
  VectorX<Scalar> sigma;
  Scalar t = 0;
  Scalar log_scale = 0;
  /// Entries in [-1e-14, 0) reset to zero so far.
  std::size_t clamped = 0;

  Scalar log_total() const { return log_scale + std::log(sigma.sum()); }
  VectorX<Scalar> true_sigma() const { return sigma * std::exp(log_scale); }
  VectorX<Scalar> pi() const { return sigma / sigma.sum(); }
};

using FilterVector = BasicFilterVector<double>;

/// Starting filter: sigma_0 = mu.
template <typename Scalar = double>
BasicFilterVector<Scalar> initial_filter(const CmomModel& model) {
  return {model.mu.cast<Scalar>(), Scalar(0), Scalar(0), 0};
}

/// gamma_bar_{y->} - gamma_{y->}(i) for each hidden state i.
template <typename Scalar = double>
VectorX<Scalar> rate_gap(const CmomModel& model, StateIndex y) {
  VectorX<Scalar> gap(model.hidden_size());
  for (StateIndex i = 0; i < model.hidden_size(); ++i) {
    gap(i) = Scalar(model.reference.leave_rate(y)) - Scalar(model.obs_rates.leave_rate(y, RateArg{0.0, i}));
  }
  return gap;
}

/// Drift of the sigma ODE while the observation sits in y: [L*] + diag(gap).
template <typename Scalar = double>
MatrixX<Scalar> drift_matrix(const CmomModel& model, StateIndex y) {
  if (!model.lambda) throw UsageError("drift matrix needs a finite hidden generator");
  MatrixX<Scalar> drift = model.lambda->generator().transpose().template cast<Scalar>();
  drift.diagonal() += rate_gap<Scalar>(model, y);
  return drift;
}

/// Hidden transition function P_t, row i = P_t(i -> .), via scaling and squaring.
template <typename Scalar = double>
MatrixX<Scalar> transition_matrix(const CmomModel& model, Scalar t) {
  if (!model.lambda) throw UsageError("transition matrix needs a finite hidden generator");
  const MatrixX<Scalar> q = model.lambda->generator().template cast<Scalar>() * t;
  MatrixX<Scalar> p = q.exp();
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p.data()[k] < Scalar(0) && p.data()[k] > Scalar(-1e-14)) p.data()[k] = Scalar(0);
  }
  return p;
}

/// Trotter factor S_t = P_t^T diag(exp(t * gap)): column i of the first factor
/// is P_t(i -> .). NumericalError when P_t is not stochastic within 1e-10.
template <typename Derived>
MatrixX<typename Derived::Scalar> trotter_factor(const CmomModel& model, StateIndex y,
                                                 typename Derived::Scalar t,
                                                 const Eigen::MatrixBase<Derived>& p_t) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = model.hidden_size();
  if (p_t.rows() != m || p_t.cols() != m) throw UsageError("transition matrix has the wrong size");
  for (Eigen::Index i = 0; i < m; ++i) {
    using std::abs;
    if (abs(p_t.row(i).sum() - Scalar(1)) > Scalar(1e-10) || (p_t.row(i).array() < Scalar(-1e-10)).any()) {
      throw NumericalError("transition matrix row " + std::to_string(i) + " is not stochastic");
    }
  }
  const VectorX<Scalar> weights = (t * rate_gap<Scalar>(model, y)).array().exp();
  return p_t.transpose() * weights.asDiagonal();
}

/// P_t - I without forming P_t: a Taylor series of the generator for short
/// times, the matrix exponential otherwise.
template <typename Scalar = double>
MatrixX<Scalar> transition_increment(const CmomModel& model, Scalar t) {
  if (!model.lambda) throw UsageError("transition matrix needs a finite hidden generator");
  const MatrixX<Scalar> q = model.lambda->generator().template cast<Scalar>() * t;
  const Scalar norm = q.cwiseAbs().colwise().sum().maxCoeff();
  if (norm > Scalar(0.5)) {
    return transition_matrix<Scalar>(model, t) - MatrixX<Scalar>::Identity(q.rows(), q.cols());
  }
  MatrixX<Scalar> sum = q;
  MatrixX<Scalar> term = q;
  for (int k = 2; k < 40; ++k) {
    term = (term * q) / Scalar(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() <= std::numeric_limits<Scalar>::epsilon() * sum.cwiseAbs().maxCoeff()) break;
  }
  return sum;
}

struct DirectFilterOptions {
  /// Trotter step length target: N_T = max(1, ceil(dt / step)).
  double step = 1e-2;
  /// When positive, every interval uses exactly this N_T instead.
  std::int64_t steps_per_interval = 0;
  /// Analytic transition function P_t; computed from the generator when empty.
  std::function<Eigen::MatrixXd(double)> transition;
  /// P_t - I, preferred over `transition` when set (keeps short steps exact).
  std::function<Eigen::MatrixXd(double)> transition_increment;
};

inline std::int64_t trotter_steps(double dt, double step) {
  const double n = std::ceil(dt / step - 1e-9);
  if (!(n < 9.0e18)) throw DomainError("Trotter step count overflows");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
}

namespace detail {

template <typename Scalar>
void renormalize(BasicFilterVector<Scalar>& fv) {
  for (Eigen::Index k = 0; k < fv.sigma.size(); ++k) {
    Scalar& v = fv.sigma(k);
    if (v < Scalar(0)) {
      if (v < Scalar(-1e-14)) throw NumericalError("filter entry became negative");
      v = Scalar(0);
      ++fv.clamped;
    }
  }
  const Scalar top = fv.sigma.maxCoeff();
  if (!(top > Scalar(0))) throw DegenerateFilterError("filter mass vanished");
  if (top < Scalar(1e-2) || top > Scalar(1e2)) {
    fv.sigma /= top;
    fv.log_scale += std::log(top);
  }
}

}  // namespace detail

/// sigma <- [S_{dt/N}]^N sigma. The power is taken by repeated squaring of
/// the increment E = e^{-h c} S_h - I, with c the largest rate gap, so that
/// long products neither overflow nor accumulate one rounding per step; the
/// shift is restored through log_scale.
template <typename Scalar>
BasicFilterVector<Scalar> evolve_between_jumps(BasicFilterVector<Scalar> fv, const CmomModel& model,
                                               StateIndex y, Scalar dt, std::int64_t steps,
                                               const DirectFilterOptions& options = {}) {
  if (!(dt >= Scalar(0))) throw DomainError("evolution interval must be nonnegative");
  if (steps < 1) throw DomainError("Trotter step count must be at least 1");
  if (dt == Scalar(0)) return fv;
  const Scalar h = dt / Scalar(steps);
  const Eigen::Index m = model.hidden_size();
  MatrixX<Scalar> delta;
  if (options.transition_increment) {
    delta = options.transition_increment(static_cast<double>(h)).template cast<Scalar>();
  } else if (options.transition) {
    delta = options.transition(static_cast<double>(h)).template cast<Scalar>() - MatrixX<Scalar>::Identity(m, m);
  } else {
    delta = transition_increment<Scalar>(model, h);
  }
  // same stochasticity check as trotter_factor
  trotter_factor(model, y, h, MatrixX<Scalar>(delta + MatrixX<Scalar>::Identity(m, m)));

  const VectorX<Scalar> gap = rate_gap<Scalar>(model, y);
  const Scalar shift = gap.maxCoeff();
  const VectorX<Scalar> g = (h * (gap.array() - shift)).unaryExpr([](Scalar v) {
    using std::expm1;
    return expm1(v);
  });
  const MatrixX<Scalar> delta_t = delta.transpose();
  MatrixX<Scalar> e = delta_t + MatrixX<Scalar>(g.asDiagonal()) + delta_t * g.asDiagonal();
  VectorX<Scalar> next(fv.sigma.size());
  for (std::int64_t n = steps;;) {
    if (n & 1) {
      next.noalias() = e * fv.sigma;
      fv.sigma += next;
      detail::renormalize(fv);
    }
    n >>= 1;
    if (n == 0) break;
    e = (Scalar(2) * e + e * e).eval();
  }
  fv.log_scale += dt * shift;
  detail::renormalize(fv);
  fv.t += dt;
  return fv;
}

/// sigma^i <- sigma^i gamma_{y_prev->y_new}(i) / gamma_bar_{y_prev->y_new}.
template <typename Scalar>
BasicFilterVector<Scalar> jump_update(BasicFilterVector<Scalar> fv, const CmomModel& model,
                                      StateIndex y_prev, StateIndex y_new) {
  if (y_prev == y_new && model.policy() == JumpPolicy::state_changes) {
    throw UsageError("observation jump must change state");
  }
  const double ref = model.reference.rate(y_prev, y_new);
  if (!(ref > 0.0)) throw AbsoluteContinuityError("observed transition has zero reference rate");
  for (StateIndex i = 0; i < model.hidden_size(); ++i) {
    fv.sigma(i) *= Scalar(model.obs_rates.rate(y_prev, y_new, RateArg{0.0, i}) / ref);
  }
  if (!(fv.sigma.maxCoeff() > Scalar(0))) {
    throw DegenerateFilterError("observation has zero likelihood under every hidden state");
  }
  detail::renormalize(fv);
  return fv;
}

enum class RecordEvent { grid, jump };

struct DirectRecord {
  double t;
  RecordEvent event;
  FilterVector filter;

  Eigen::VectorXd pi() const { return filter.pi(); }
  double log_sigma_total() const { return filter.log_total(); }
};

/// Recursion over an observation path: evolve on [t_{n-1}, t_n), update at
/// t_n. Emits a record at time 0, at every observation event, at every grid
/// point and at the horizon.
inline std::vector<DirectRecord> run_direct_filter(const CmomModel& model, const ChainPath& y_path,
                                                   std::vector<double> grid = {},
                                                   const DirectFilterOptions& options = {}) {
  const ValidationReport report = validate_for_direct_filter(model);
  if (!report.ok()) {
    throw ModelError("model fails validation: " + report.violations.front().condition + ": " +
                     report.violations.front().detail);
  }
  const double horizon = y_path.horizon();
  std::sort(grid.begin(), grid.end());
  std::erase_if(grid, [&](double g) { return !(g > 0.0 && g <= horizon); });
  if (grid.empty() || grid.back() < horizon) grid.push_back(horizon);

  // P_h - I is computed once per distinct step length
  DirectFilterOptions local = options;
  if (!local.transition && !local.transition_increment) {
    auto cache = std::make_shared<std::map<double, Eigen::MatrixXd>>();
    local.transition_increment = [cache, &model](double h) -> Eigen::MatrixXd {
      auto it = cache->find(h);
      if (it == cache->end()) it = cache->emplace(h, transition_increment<double>(model, h)).first;
      return it->second;
    };
  }

  std::vector<DirectRecord> out;
  FilterVector fv = initial_filter<double>(model);
  out.push_back({0.0, RecordEvent::grid, fv});

  auto advance = [&](StateIndex y, double to) {
    const double dt = to - static_cast<double>(fv.t);
    const std::int64_t steps = local.steps_per_interval > 0 ? local.steps_per_interval : trotter_steps(dt, local.step);
    fv = evolve_between_jumps(fv, model, y, dt, steps, local);
    fv.t = to;
  };

  std::size_t g = 0;
  StateIndex y = y_path.initial_state();
  for (const Jump& j : y_path.jumps()) {
    for (; g < grid.size() && grid[g] < j.time; ++g) {
      advance(y, grid[g]);
      out.push_back({grid[g], RecordEvent::grid, fv});
    }
    if (g < grid.size() && grid[g] == j.time) ++g;
    advance(y, j.time);
    fv = jump_update(fv, model, y, j.state);
    out.push_back({j.time, RecordEvent::jump, fv});
    y = j.state;
  }
  for (; g < grid.size(); ++g) {
    advance(y, grid[g]);
    out.push_back({grid[g], RecordEvent::grid, fv});
  }
  return out;
}

/// log sigma_T(1) of the direct filter.
inline double direct_log_likelihood(const CmomModel& model, const ChainPath& y_path,
                                    const DirectFilterOptions& options = {}) {
  return run_direct_filter(model, y_path, {}, options).back().log_sigma_total();
}

/// Matrix of log Bayes factors log B_{a|b}(T) = log sigma^a_T(1) - log sigma^b_T(1).
/// UsageError unless every model shares the observation space and reference rates.
inline Eigen::MatrixXd compare_models(const std::vector<CmomModel>& models, const ChainPath& y_path,
                                      const DirectFilterOptions& options = {}) {
  if (models.empty()) throw UsageError("compare_models needs at least one model");
  for (const CmomModel& m : models) {
    if (m.obs_states != models.front().obs_states) throw UsageError("models differ in observation space");
    if (m.reference.policy() != models.front().reference.policy() ||
        m.reference.rates() != models.front().reference.rates()) {
      throw UsageError("Bayes factors need a common reference measure");
    }
  }
  Eigen::VectorXd log_total(static_cast<Eigen::Index>(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k) {
    log_total(static_cast<Eigen::Index>(k)) = direct_log_likelihood(models[k], y_path, options);
  }
  const Eigen::Index n = log_total.size();
  return log_total.replicate(1, n) - log_total.transpose().replicate(n, 1);
}

}  // namespace rateshift
