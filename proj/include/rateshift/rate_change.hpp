#pragma once

#include "rateshift/chain_core.hpp"
#include "rateshift/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace rateshift {

/// Natural log of the likelihood ratio A_t between target and reference laws.
struct LogWeight {
  double log_a = 0.0;
  double t = 0.0;

  double value() const { return std::exp(log_a); }
};

/// What the target rates are evaluated at: the current time, or the state of
/// a hidden path at that time.
struct Driver {
  const ChainPath* hidden = nullptr;

  static Driver time() noexcept { return {}; }
  static Driver hidden_path(const ChainPath& x) noexcept { return {&x}; }

  RateArg at(double t) const;
  /// First time strictly after t at which the driver's argument may change.
  double next_change(double t) const;
};

// ------------------------------------------------------------------ simulation

/// Exact reference simulation: holding times Exponential(gamma_bar_{i->}),
/// next state with probability gamma_bar_{i->j} / gamma_bar_{i->}.
ChainPath simulate_reference_chain(const RateMatrix& rates, const Eigen::VectorXd& init,
                                   double horizon, RngStream& rng);

/// Continues the reference chain from `state` at time `start` until `end`
/// or until `max_jumps` jumps have been appended.
std::vector<Jump> simulate_reference_jumps(const RateMatrix& rates, StateIndex state, double start,
                                           double end, RngStream& rng,
                                           std::size_t max_jumps = std::numeric_limits<std::size_t>::max());

/// Samples a state from a probability vector. DomainError unless the vector is
/// nonnegative and sums to 1 within 1e-12.
StateIndex sample_initial(const Eigen::VectorXd& init, RngStream& rng);
void check_probability_vector(const Eigen::VectorXd& p, const char* what);

/// Exact simulation of the target chain by Lewis-Shedler thinning: candidate
/// events at rate majorant(i) = gamma_bar_{i->} * ratio_bound, accepted with
/// probability gamma_{i->}(u)/majorant(i). Throws BoundViolationError when a
/// target leave rate exceeds its majorant.
ChainPath simulate_target_by_thinning(const TargetRateFamily& target, const RateMatrix& reference,
                                      double ratio_bound, StateIndex initial, double horizon,
                                      Driver driver, RngStream& rng);

// --------------------------------------------------------------------- weights

/// Time integral over [a, b] of gamma_bar_{y->} - gamma_{y->}(u_s) for a fixed
/// observation state y. Exact between knots and driver changes.
double integrated_rate_gap(StateIndex y, double a, double b, const TargetRateFamily& target,
                           const RateMatrix& reference, Driver driver);

/// log(gamma_{from->to}(u) / gamma_bar_{from->to}); -inf when the target rate
/// is zero. AbsoluteContinuityError when the reference rate is zero.
double jump_log_ratio(StateIndex from, StateIndex to, RateArg u, const TargetRateFamily& target,
                      const RateMatrix& reference);

/// log A_t over the whole path (t defaults to the path horizon).
LogWeight log_weight(const ChainPath& path, const TargetRateFamily& target,
                     const RateMatrix& reference, Driver driver = Driver::time(),
                     std::optional<double> t = std::nullopt);

/// A_{W_n} from A_{W_{n-1}}: the integral over (W_{n-1}, W_n] and the jump
/// factor at W_n. `n` is 1-based; prev.t must equal W_{n-1} (W_0 = 0).
LogWeight incremental_log_weight(const LogWeight& prev, const ChainPath& path, std::size_t n,
                                 const TargetRateFamily& target, const RateMatrix& reference,
                                 Driver driver = Driver::time());

/// Advances prev to time t, including every jump factor in (prev.t, t].
LogWeight advance_log_weight(const LogWeight& prev, const ChainPath& path, double t,
                             const TargetRateFamily& target, const RateMatrix& reference,
                             Driver driver = Driver::time());

// ------------------------------------------------------------------- rejection

inline constexpr std::uint64_t kDefaultMaxAttempts = 1'000'000;

struct RejectionTrial {
  ChainPath path;
  double weight;  // A_T(path)
  bool accepted;
};

/// One proposal draw plus its uniform on [0, C].
RejectionTrial rejection_trial(const RateMatrix& proposal, const TargetRateFamily& target,
                               double bound_c, const Eigen::VectorXd& init, double horizon,
                               RngStream& rng);

struct RejectionResult {
  ChainPath path;
  std::uint64_t attempts;
};

/// Von Neumann acceptance-rejection over the whole horizon. The accepted path
/// has the target law whenever A_T <= bound_c for every proposal path.
RejectionResult rejection_sample(const RateMatrix& proposal, const TargetRateFamily& target,
                                 double bound_c, const Eigen::VectorXd& init, double horizon,
                                 RngStream& rng, std::uint64_t max_attempts = kDefaultMaxAttempts);

/// Bound C valid for every proposal path when no target rate exceeds its
/// reference rate: exp(T * sup(gamma_bar_{i->} - gamma_{i->})^+). Empty when
/// some jump ratio exceeds 1 (no path-independent bound exists).
std::optional<double> certified_rejection_bound(const RateMatrix& proposal,
                                                const TargetRateFamily& target, double horizon);

struct SegmentedRejectionResult {
  ChainPath path;
  std::uint64_t attempts;
  std::size_t blocks;
  double first_block_bound;
};

/// Per-block bound exp(gap * remaining) * max(1, ratio)^n where gap is the
/// largest positive leave-rate gap and ratio bounds gamma_{i->j}/gamma_bar_{i->j}.
double segmented_block_bound(const RateMatrix& proposal, const TargetRateFamily& target,
                             std::size_t jumps_per_block, double remaining);

/// Rejection applied to successive blocks of at most `jumps_per_block` jumps,
/// each stopped at T ^ W_{kn}. Requires the bounded-transitions condition.
SegmentedRejectionResult segmented_rejection_sample(const RateMatrix& proposal,
                                                    const TargetRateFamily& target,
                                                    std::size_t jumps_per_block,
                                                    const Eigen::VectorXd& init, double horizon,
                                                    RngStream& rng,
                                                    std::uint64_t max_attempts = kDefaultMaxAttempts);

// --------------------------------------------------------- weighted estimation

struct WeightedSampleSet {
  std::vector<ChainPath> paths;
  std::vector<LogWeight> log_weights;

  std::size_t size() const noexcept { return paths.size(); }
};

/// M independent proposal paths with their weights; sample m uses the stream
/// forked from `seed_stream` with key m.
WeightedSampleSet weighted_sample(const RateMatrix& proposal, const TargetRateFamily& target,
                                  std::size_t m, const Eigen::VectorXd& init, double horizon,
                                  const RngStream& seed_stream, unsigned threads = 1);

struct Estimate {
  double value;
  double std_error;
};

using PathFunctional = std::function<double(const ChainPath&)>;

/// (1/M) sum A^m f(Y^m) with the sample standard error of the weighted terms.
Estimate weighted_expectation(const PathFunctional& f, const RateMatrix& proposal,
                              const TargetRateFamily& target, std::size_t m,
                              const Eigen::VectorXd& init, double horizon,
                              const RngStream& seed_stream, unsigned threads = 1);

/// Mean and standard error of a sequence of terms, summed in index order.
Estimate mean_and_stderr(const std::vector<double>& terms);

}  // namespace rateshift
