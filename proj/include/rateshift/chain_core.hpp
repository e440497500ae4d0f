#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rateshift {

using StateIndex = int;

/// Ordered, finite list of distinct state labels. Countable spaces are handled
/// by a user-chosen truncation; nothing is truncated implicitly.
class StateSpace {
 public:
  StateSpace() = default;
  explicit StateSpace(std::vector<std::string> labels);
  /// Labels "0", "1", ..., "n-1".
  static StateSpace indexed(int n);

  int size() const noexcept { return static_cast<int>(labels_.size()); }
  const std::string& label(StateIndex i) const { return labels_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  /// Throws DomainError for an unknown label.
  StateIndex index_of(const std::string& label) const;

  friend bool operator==(const StateSpace&, const StateSpace&) = default;

 private:
  std::vector<std::string> labels_;
};

/// Whether a path may record an event that leaves the state unchanged.
/// Plain chains only record state changes; CTHMM observation streams record
/// every update event, including an emitted symbol equal to the previous one.
enum class JumpPolicy { state_changes, observable_updates };

struct Jump {
  double time;
  StateIndex state;

  friend bool operator==(const Jump&, const Jump&) = default;
};

/// Cadlag piecewise-constant trajectory on [0, horizon]: the value is the
/// initial state on [0, W_1) and jumps[n-1].state on [W_n, W_{n+1}).
class ChainPath {
 public:
  ChainPath(StateIndex initial_state, std::vector<Jump> jumps, double horizon,
            JumpPolicy policy = JumpPolicy::state_changes);

  StateIndex initial_state() const noexcept { return initial_; }
  const std::vector<Jump>& jumps() const noexcept { return jumps_; }
  double horizon() const noexcept { return horizon_; }
  JumpPolicy policy() const noexcept { return policy_; }
  std::size_t size() const noexcept { return jumps_.size(); }
  StateIndex final_state() const noexcept { return jumps_.empty() ? initial_ : jumps_.back().state; }

  /// State occupied immediately before the n-th jump (1-based), i.e. theta_{n-1}.
  StateIndex state_before(std::size_t n) const;

  friend bool operator==(const ChainPath&, const ChainPath&) = default;

 private:
  StateIndex initial_;
  std::vector<Jump> jumps_;
  double horizon_;
  JumpPolicy policy_;
};

/// Value of the path at time t (right-continuous). DomainError outside [0, horizon].
StateIndex path_state_at(const ChainPath& path, double t);
/// Number of jump times W_n <= t. DomainError outside [0, horizon].
std::size_t jump_count(const ChainPath& path, double t);

/// Dense nonnegative rate table with zero diagonal (state_changes policy) or
/// with self-update rates on the diagonal (observable_updates policy).
class RateMatrix {
 public:
  explicit RateMatrix(Eigen::MatrixXd rates, JumpPolicy policy = JumpPolicy::state_changes);

  int size() const noexcept { return static_cast<int>(rates_.rows()); }
  const Eigen::MatrixXd& rates() const noexcept { return rates_; }
  double rate(StateIndex i, StateIndex j) const { return rates_(i, j); }
  /// Total event rate out of i (sum over admissible targets).
  double leave_rate(StateIndex i) const { return leave_(i); }
  const Eigen::VectorXd& leave_rates() const noexcept { return leave_; }
  JumpPolicy policy() const noexcept { return policy_; }
  /// Row i as contiguous storage (jump distribution weights).
  std::span<const double> row(StateIndex i) const {
    return {row_major_.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(size()),
            static_cast<std::size_t>(size())};
  }

  /// Generator matrix: rates with the diagonal replaced by minus the
  /// state-change leave rate.
  Eigen::MatrixXd generator() const;

 private:
  Eigen::MatrixXd rates_;
  Eigen::VectorXd leave_;
  std::vector<double> row_major_;
  JumpPolicy policy_;
};

/// Argument of a target rate: the time (time-dependent kind) or the hidden
/// state (state-dependent kind). Constant families ignore both.
struct RateArg {
  double time = 0.0;
  StateIndex hidden = 0;
};

enum class RateKind { constant, time_dependent, state_dependent };

/// Target rates gamma_{i->j}(u) that the measure change moves the reference
/// chain onto.
class TargetRateFamily {
 public:
  using RateFunction = std::function<double(StateIndex, StateIndex, double)>;

  static TargetRateFamily constant(Eigen::MatrixXd rates,
                                   JumpPolicy policy = JumpPolicy::state_changes);
  /// Rates[k] applies on [breaks[k], breaks[k+1]); breaks[0] must be 0 and the
  /// last segment extends to infinity.
  static TargetRateFamily piecewise_in_time(std::vector<double> breaks,
                                            std::vector<Eigen::MatrixXd> rates,
                                            JumpPolicy policy = JumpPolicy::state_changes);
  /// Arbitrary callable. The grid marks points where the integrand may be
  /// non-smooth; time integrals use adaptive Gauss-Kronrod between grid points.
  /// A ratio bound must be declared since it cannot be computed.
  static TargetRateFamily time_function(int size, RateFunction fn, std::vector<double> grid,
                                        double ratio_bound,
                                        JumpPolicy policy = JumpPolicy::state_changes);
  /// per_hidden[x] is the observation rate table when the hidden state is x.
  static TargetRateFamily state_dependent(std::vector<Eigen::MatrixXd> per_hidden,
                                          JumpPolicy policy = JumpPolicy::state_changes);

  RateKind kind() const noexcept { return kind_; }
  int size() const noexcept { return size_; }
  JumpPolicy policy() const noexcept { return policy_; }
  /// True when every rate is constant between knots (exact integrals).
  bool piecewise_constant() const noexcept { return !fn_; }
  /// Number of hidden states for the state-dependent kind, else 0.
  int hidden_size() const noexcept {
    return kind_ == RateKind::state_dependent ? static_cast<int>(tables_.size()) : 0;
  }

  double rate(StateIndex i, StateIndex j, RateArg u) const;
  double leave_rate(StateIndex i, RateArg u) const;

  /// Rate table in force at u (piecewise-constant kinds only).
  const Eigen::MatrixXd& table_at(RateArg u) const;
  const std::vector<Eigen::MatrixXd>& tables() const noexcept { return tables_; }
  /// Time knots: segment starts for piecewise_in_time, quadrature grid for callables.
  const std::vector<double>& knots() const noexcept { return knots_; }
  /// First time knot strictly greater than t, or +inf.
  double next_knot(double t) const;

  std::optional<double> declared_ratio_bound() const noexcept { return ratio_bound_; }
  TargetRateFamily with_ratio_bound(double bound) const;

  /// Integral over [a, b] of leave_rate(i, time) for time-varying families.
  double integrate_leave_rate(StateIndex i, double a, double b) const;

 private:
  TargetRateFamily() = default;
  std::size_t segment_index(double t) const;

  RateKind kind_ = RateKind::constant;
  int size_ = 0;
  JumpPolicy policy_ = JumpPolicy::state_changes;
  std::vector<Eigen::MatrixXd> tables_;
  std::vector<Eigen::VectorXd> leave_;
  std::vector<double> knots_;
  RateFunction fn_;
  std::optional<double> ratio_bound_;
};

struct Violation {
  std::string condition;  // C1, C2, C3, A1, A2, A3, U, dominance, bounded_transitions
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  bool has(const std::string& condition) const;
  void add(std::string condition, std::string detail);
  void merge(const ValidationReport& other);
};

/// Checks (C1)-(C3) and absolute continuity of the target against the
/// reference. For callables, positivity and dominance are probed at the grid
/// points and midpoints only; the declared ratio bound is trusted.
ValidationReport validate(const RateMatrix& reference, const TargetRateFamily& target);

/// Checks the bounded-transitions condition with constant c: every reference
/// leave rate and every ratio gamma_{i->j}/gamma_bar_{i->j} is at most c.
ValidationReport check_bounded_transitions(const RateMatrix& reference,
                                           const TargetRateFamily& target, double c);

/// Smallest c satisfying the bounded-transitions condition (piecewise-constant
/// families; callables use their declared ratio bound).
double bounded_transitions_constant(const RateMatrix& reference, const TargetRateFamily& target);

/// CSV with header `time,state`; row 0 is the initial state at 0.0.
void write_path_csv(std::ostream& out, const ChainPath& path, const StateSpace& states);
/// Reads the CSV form. The horizon is not part of the format: when absent it
/// defaults to the last jump time.
ChainPath read_path_csv(std::istream& in, const StateSpace& states,
                        std::optional<double> horizon = std::nullopt,
                        JumpPolicy policy = JumpPolicy::state_changes);

/// Decimal rendering with 17 significant digits that always contains a '.'.
std::string format_real(double value);

}  // namespace rateshift
