#include "rateshift/rate_change.hpp"

#include "rateshift/errors.hpp"
#include "rateshift/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rateshift {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// log A accumulated from `start` (in `state`) over the given jumps, then on
/// to `end`. Jumps must lie in (start, end].
double segment_log_weight(StateIndex state, double start, std::span<const Jump> jumps, double end,
                          const TargetRateFamily& target, const RateMatrix& reference,
                          Driver driver) {
  double log_a = 0.0;
  double s = start;
  for (const Jump& j : jumps) {
    log_a += integrated_rate_gap(state, s, j.time, target, reference, driver);
    log_a += jump_log_ratio(state, j.state, driver.at(j.time), target, reference);
    state = j.state;
    s = j.time;
  }
  log_a += integrated_rate_gap(state, s, end, target, reference, driver);
  return log_a;
}

void check_compatible(const TargetRateFamily& target, const RateMatrix& reference) {
  if (target.size() != reference.size()) {
    throw ModelError("target and reference rate tables differ in size");
  }
}

}  // namespace

// ---------------------------------------------------------------------- Driver

RateArg Driver::at(double t) const {
  if (hidden == nullptr) return {t, 0};
  return {t, path_state_at(*hidden, t)};
}

double Driver::next_change(double t) const {
  if (hidden == nullptr) return kInf;
  const auto& jumps = hidden->jumps();
  auto it = std::upper_bound(jumps.begin(), jumps.end(), t,
                             [](double value, const Jump& j) { return value < j.time; });
  return it == jumps.end() ? kInf : it->time;
}

// ------------------------------------------------------------------ simulation

void check_probability_vector(const Eigen::VectorXd& p, const char* what) {
  if (p.size() == 0) throw DomainError(std::string(what) + ": empty probability vector");
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!(p(k) >= 0.0) || !std::isfinite(p(k))) {
      throw DomainError(std::string(what) + ": probabilities must be finite and nonnegative");
    }
  }
  if (std::abs(p.sum() - 1.0) > 1e-12) throw DomainError(std::string(what) + ": probabilities must sum to 1");
}

StateIndex sample_initial(const Eigen::VectorXd& init, RngStream& rng) {
  check_probability_vector(init, "initial law");
  return static_cast<StateIndex>(rng.categorical({init.data(), static_cast<std::size_t>(init.size())}));
}

std::vector<Jump> simulate_reference_jumps(const RateMatrix& rates, StateIndex state, double start,
                                           double end, RngStream& rng, std::size_t max_jumps) {
  std::vector<Jump> jumps;
  double t = start;
  while (jumps.size() < max_jumps) {
    const double leave = rates.leave_rate(state);
    if (!(leave > 0.0)) break;
    t += rng.exponential(leave);
    if (t > end) break;
    state = static_cast<StateIndex>(rng.categorical(rates.row(state)));
    jumps.push_back({t, state});
  }
  return jumps;
}

ChainPath simulate_reference_chain(const RateMatrix& rates, const Eigen::VectorXd& init,
                                   double horizon, RngStream& rng) {
  if (!(horizon >= 0.0)) throw DomainError("horizon must be nonnegative");
  if (init.size() != rates.size()) throw DomainError("initial law size does not match the state space");
  const StateIndex y0 = sample_initial(init, rng);
  return ChainPath(y0, simulate_reference_jumps(rates, y0, 0.0, horizon, rng), horizon, rates.policy());
}

ChainPath simulate_target_by_thinning(const TargetRateFamily& target, const RateMatrix& reference,
                                      double ratio_bound, StateIndex initial, double horizon,
                                      Driver driver, RngStream& rng) {
  check_compatible(target, reference);
  if (!(ratio_bound > 0.0)) throw DomainError("thinning ratio bound must be positive");
  std::vector<Jump> jumps;
  std::vector<double> weights(static_cast<std::size_t>(target.size()));
  StateIndex state = initial;
  double t = 0.0;
  for (;;) {
    const double majorant = reference.leave_rate(state) * ratio_bound;
    if (!(majorant > 0.0)) break;
    t += rng.exponential(majorant);
    if (t > horizon) break;
    const RateArg u = driver.at(t);
    const double leave = target.leave_rate(state, u);
    if (leave > majorant * (1.0 + 1e-12)) {
      throw BoundViolationError("target leave rate exceeds the thinning majorant", leave, majorant);
    }
    if (rng.uniform() * majorant >= leave) continue;
    for (StateIndex j = 0; j < target.size(); ++j) weights[static_cast<std::size_t>(j)] = target.rate(state, j, u);
    state = static_cast<StateIndex>(rng.categorical(weights));
    jumps.push_back({t, state});
  }
  return ChainPath(initial, std::move(jumps), horizon, target.policy());
}

// --------------------------------------------------------------------- weights

double integrated_rate_gap(StateIndex y, double a, double b, const TargetRateFamily& target,
                           const RateMatrix& reference, Driver driver) {
  if (!(b >= a)) throw DomainError("integration interval reversed");
  if (!target.piecewise_constant()) {
    return reference.leave_rate(y) * (b - a) - target.integrate_leave_rate(y, a, b);
  }
  const double ref_leave = reference.leave_rate(y);
  double total = 0.0;
  double s = a;
  while (s < b) {
    const double next = std::min({b, target.next_knot(s), driver.next_change(s)});
    total += (ref_leave - target.leave_rate(y, driver.at(s))) * (next - s);
    s = next;
  }
  return total;
}

double jump_log_ratio(StateIndex from, StateIndex to, RateArg u, const TargetRateFamily& target,
                      const RateMatrix& reference) {
  const double ref = reference.rate(from, to);
  if (!(ref > 0.0)) {
    throw AbsoluteContinuityError("path jumps " + std::to_string(from) + "->" + std::to_string(to) +
                                  " where the reference rate is zero");
  }
  const double tgt = target.rate(from, to, u);
  if (tgt < 0.0) throw DomainError("negative target rate");
  return tgt == 0.0 ? -kInf : std::log(tgt / ref);
}

LogWeight log_weight(const ChainPath& path, const TargetRateFamily& target,
                     const RateMatrix& reference, Driver driver, std::optional<double> t) {
  check_compatible(target, reference);
  const double end = t.value_or(path.horizon());
  const std::size_t n = jump_count(path, end);
  std::span<const Jump> jumps(path.jumps().data(), n);
  return {segment_log_weight(path.initial_state(), 0.0, jumps, end, target, reference, driver), end};
}

LogWeight advance_log_weight(const LogWeight& prev, const ChainPath& path, double t,
                             const TargetRateFamily& target, const RateMatrix& reference,
                             Driver driver) {
  check_compatible(target, reference);
  if (!(t >= prev.t)) throw UsageError("cannot advance a weight backwards in time");
  const std::size_t lo = jump_count(path, prev.t);
  const std::size_t hi = jump_count(path, t);
  std::span<const Jump> jumps(path.jumps().data() + lo, hi - lo);
  const StateIndex state = lo == 0 ? path.initial_state() : path.jumps()[lo - 1].state;
  return {prev.log_a + segment_log_weight(state, prev.t, jumps, t, target, reference, driver), t};
}

LogWeight incremental_log_weight(const LogWeight& prev, const ChainPath& path, std::size_t n,
                                 const TargetRateFamily& target, const RateMatrix& reference,
                                 Driver driver) {
  if (n == 0 || n > path.size()) throw UsageError("jump number out of range");
  const double start = n == 1 ? 0.0 : path.jumps()[n - 2].time;
  if (prev.t != start) throw UsageError("previous weight is not at the preceding jump time");
  return advance_log_weight(prev, path, path.jumps()[n - 1].time, target, reference, driver);
}

// ------------------------------------------------------------------- rejection

RejectionTrial rejection_trial(const RateMatrix& proposal, const TargetRateFamily& target,
                               double bound_c, const Eigen::VectorXd& init, double horizon,
                               RngStream& rng) {
  ChainPath path = simulate_reference_chain(proposal, init, horizon, rng);
  const double a = log_weight(path, target, proposal).value();
  if (a > bound_c) {
    throw BoundViolationError("likelihood ratio exceeds the declared rejection bound C", a, bound_c);
  }
  const double u = rng.uniform(0.0, bound_c);
  return {std::move(path), a, u <= a};
}

RejectionResult rejection_sample(const RateMatrix& proposal, const TargetRateFamily& target,
                                 double bound_c, const Eigen::VectorXd& init, double horizon,
                                 RngStream& rng, std::uint64_t max_attempts) {
  if (!(bound_c > 1.0)) throw DomainError("rejection bound C must exceed 1");
  for (std::uint64_t attempt = 1; attempt <= max_attempts; ++attempt) {
    RejectionTrial trial = rejection_trial(proposal, target, bound_c, init, horizon, rng);
    if (trial.accepted) return {std::move(trial.path), attempt};
  }
  throw BudgetError("rejection sampler exhausted its attempt budget", max_attempts, 0);
}

std::optional<double> certified_rejection_bound(const RateMatrix& proposal,
                                                const TargetRateFamily& target, double horizon) {
  check_compatible(target, proposal);
  if (!target.piecewise_constant()) return std::nullopt;
  double gap = 0.0;
  for (std::size_t k = 0; k < target.tables().size(); ++k) {
    const Eigen::MatrixXd& table = target.tables()[k];
    for (StateIndex i = 0; i < proposal.size(); ++i) {
      for (StateIndex j = 0; j < proposal.size(); ++j) {
        if (table(i, j) > proposal.rate(i, j)) return std::nullopt;
      }
      gap = std::max(gap, proposal.leave_rate(i) - table.row(i).sum());
    }
  }
  return std::max(std::exp(gap * horizon), 1.0 + 1e-12);
}

double segmented_block_bound(const RateMatrix& proposal, const TargetRateFamily& target,
                             std::size_t jumps_per_block, double remaining) {
  check_compatible(target, proposal);
  double gap = 0.0;
  double ratio = 0.0;
  if (target.piecewise_constant()) {
    for (const Eigen::MatrixXd& table : target.tables()) {
      for (StateIndex i = 0; i < proposal.size(); ++i) {
        gap = std::max(gap, proposal.leave_rate(i) - table.row(i).sum());
        for (StateIndex j = 0; j < proposal.size(); ++j) {
          if (table(i, j) == 0.0) continue;
          if (proposal.rate(i, j) == 0.0) return kInf;
          ratio = std::max(ratio, table(i, j) / proposal.rate(i, j));
        }
      }
    }
  } else {
    // callables: gamma >= 0 caps the gap, the declared bound caps the ratios
    gap = proposal.leave_rates().maxCoeff();
    ratio = *target.declared_ratio_bound();
  }
  const double c = std::exp(gap * remaining) *
                   std::pow(std::max(1.0, ratio), static_cast<double>(jumps_per_block));
  return std::max(c, 1.0 + 1e-12);
}

SegmentedRejectionResult segmented_rejection_sample(const RateMatrix& proposal,
                                                    const TargetRateFamily& target,
                                                    std::size_t jumps_per_block,
                                                    const Eigen::VectorXd& init, double horizon,
                                                    RngStream& rng, std::uint64_t max_attempts) {
  if (jumps_per_block == 0) throw DomainError("jumps per block must be at least 1");
  if (!(horizon >= 0.0)) throw DomainError("horizon must be nonnegative");
  check_compatible(target, proposal);
  StateIndex state = sample_initial(init, rng);
  const StateIndex initial = state;
  std::vector<Jump> accepted;
  double start = 0.0;
  std::uint64_t attempts = 0;
  std::size_t blocks = 0;
  const double first_bound = segmented_block_bound(proposal, target, jumps_per_block, horizon);
  if (!std::isfinite(first_bound)) throw DomainError("bounded-transitions condition fails: no finite block bound");
  do {
    const double bound = segmented_block_bound(proposal, target, jumps_per_block, horizon - start);
    for (;;) {
      if (attempts >= max_attempts) {
        throw BudgetError("segmented rejection sampler exhausted its attempt budget", attempts, blocks);
      }
      ++attempts;
      std::vector<Jump> block = simulate_reference_jumps(proposal, state, start, horizon, rng, jumps_per_block);
      const double end = block.size() == jumps_per_block ? block.back().time : horizon;
      const double a =
          std::exp(segment_log_weight(state, start, block, end, target, proposal, Driver::time()));
      if (a > bound) throw BoundViolationError("block likelihood ratio exceeds its bound", a, bound);
      if (rng.uniform(0.0, bound) <= a) {
        if (!block.empty()) state = block.back().state;
        accepted.insert(accepted.end(), block.begin(), block.end());
        start = end;
        ++blocks;
        break;
      }
    }
  } while (start < horizon);
  return {ChainPath(initial, std::move(accepted), horizon, proposal.policy()), attempts, blocks, first_bound};
}

// --------------------------------------------------------- weighted estimation

Estimate mean_and_stderr(const std::vector<double>& terms) {
  if (terms.size() < 2) throw DomainError("need at least two terms for a standard error");
  const double m = static_cast<double>(terms.size());
  double sum = 0.0;
  for (double x : terms) sum += x;
  const double mean = sum / m;
  double ss = 0.0;
  for (double x : terms) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (m - 1.0) / m)};
}

WeightedSampleSet weighted_sample(const RateMatrix& proposal, const TargetRateFamily& target,
                                  std::size_t m, const Eigen::VectorXd& init, double horizon,
                                  const RngStream& seed_stream, unsigned threads) {
  std::vector<std::optional<ChainPath>> paths(m);
  WeightedSampleSet set;
  set.log_weights.resize(m);
  parallel_for(m, threads, [&](std::size_t k) {
    RngStream rng = seed_stream.fork(k);
    paths[k] = simulate_reference_chain(proposal, init, horizon, rng);
    set.log_weights[k] = log_weight(*paths[k], target, proposal);
  });
  set.paths.reserve(m);
  for (auto& p : paths) set.paths.push_back(std::move(*p));
  return set;
}

Estimate weighted_expectation(const PathFunctional& f, const RateMatrix& proposal,
                              const TargetRateFamily& target, std::size_t m,
                              const Eigen::VectorXd& init, double horizon,
                              const RngStream& seed_stream, unsigned threads) {
  if (m < 2) throw DomainError("weighted expectation needs M >= 2");
  std::vector<double> terms(m);
  parallel_for(m, threads, [&](std::size_t k) {
    RngStream rng = seed_stream.fork(k);
    const ChainPath path = simulate_reference_chain(proposal, init, horizon, rng);
    const double a = log_weight(path, target, proposal).value();
    terms[k] = a == 0.0 ? 0.0 : a * f(path);
  });
  return mean_and_stderr(terms);
}

}  // namespace rateshift
