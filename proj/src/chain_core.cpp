#include "rateshift/chain_core.hpp"

#include "rateshift/errors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace rateshift {

// ---------------------------------------------------------------- StateSpace

StateSpace::StateSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ModelError("state space must be non-empty");
  std::set<std::string> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) throw ModelError("state labels must be distinct");
}

StateSpace StateSpace::indexed(int n) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels.push_back(std::to_string(i));
  return StateSpace(std::move(labels));
}

StateIndex StateSpace::index_of(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw DomainError("unknown state label '" + label + "'");
  return static_cast<StateIndex>(it - labels_.begin());
}

// ----------------------------------------------------------------- ChainPath

ChainPath::ChainPath(StateIndex initial_state, std::vector<Jump> jumps, double horizon,
                     JumpPolicy policy)
    : initial_(initial_state), jumps_(std::move(jumps)), horizon_(horizon), policy_(policy) {
  if (!(horizon_ >= 0.0) || !std::isfinite(horizon_)) {
    throw DomainError("path horizon must be finite and nonnegative");
  }
  double prev_time = 0.0;
  StateIndex prev_state = initial_;
  for (std::size_t n = 0; n < jumps_.size(); ++n) {
    const Jump& j = jumps_[n];
    if (!(j.time > prev_time)) {
      throw DomainError("jump times must be strictly increasing and positive");
    }
    if (j.time > horizon_) throw DomainError("jump time beyond path horizon");
    if (policy_ == JumpPolicy::state_changes && j.state == prev_state) {
      throw DomainError("self-jump recorded in a state-change path");
    }
    prev_time = j.time;
    prev_state = j.state;
  }
}

StateIndex ChainPath::state_before(std::size_t n) const {
  if (n == 0 || n > jumps_.size()) throw DomainError("jump number out of range");
  return n == 1 ? initial_ : jumps_[n - 2].state;
}

namespace {

void check_time(const ChainPath& path, double t) {
  if (!(t >= 0.0 && t <= path.horizon())) throw DomainError("time outside [0, horizon]");
}

}  // namespace

std::size_t jump_count(const ChainPath& path, double t) {
  check_time(path, t);
  const auto& jumps = path.jumps();
  auto it = std::upper_bound(jumps.begin(), jumps.end(), t,
                             [](double value, const Jump& j) { return value < j.time; });
  return static_cast<std::size_t>(it - jumps.begin());
}

StateIndex path_state_at(const ChainPath& path, double t) {
  const std::size_t n = jump_count(path, t);
  return n == 0 ? path.initial_state() : path.jumps()[n - 1].state;
}

// ---------------------------------------------------------------- RateMatrix

namespace {

void check_table(const Eigen::MatrixXd& rates, JumpPolicy policy, const char* what) {
  if (rates.rows() == 0 || rates.rows() != rates.cols()) {
    throw ModelError(std::string(what) + ": rate table must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < rates.rows(); ++i) {
    for (Eigen::Index j = 0; j < rates.cols(); ++j) {
      const double r = rates(i, j);
      if (!std::isfinite(r)) throw ModelError(std::string(what) + ": non-finite rate");
      if (r < 0.0) throw ModelError(std::string(what) + ": negative rate");
      if (i == j && policy == JumpPolicy::state_changes && r != 0.0) {
        throw ModelError(std::string(what) + ": nonzero diagonal in a state-change rate table");
      }
    }
  }
}

}  // namespace

RateMatrix::RateMatrix(Eigen::MatrixXd rates, JumpPolicy policy)
    : rates_(std::move(rates)), policy_(policy) {
  check_table(rates_, policy_, "reference");
  leave_ = rates_.rowwise().sum();
  row_major_.resize(static_cast<std::size_t>(rates_.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      row_major_.data(), rates_.rows(), rates_.cols()) = rates_;
}

Eigen::MatrixXd RateMatrix::generator() const {
  Eigen::MatrixXd q = rates_;
  q.diagonal().setZero();
  q.diagonal() = -q.rowwise().sum();
  return q;
}

// ---------------------------------------------------------- TargetRateFamily

TargetRateFamily TargetRateFamily::constant(Eigen::MatrixXd rates, JumpPolicy policy) {
  check_table(rates, policy, "target");
  TargetRateFamily f;
  f.kind_ = RateKind::constant;
  f.size_ = static_cast<int>(rates.rows());
  f.policy_ = policy;
  f.leave_.push_back(rates.rowwise().sum());
  f.tables_.push_back(std::move(rates));
  return f;
}

TargetRateFamily TargetRateFamily::piecewise_in_time(std::vector<double> breaks,
                                                     std::vector<Eigen::MatrixXd> rates,
                                                     JumpPolicy policy) {
  if (breaks.empty() || breaks.size() != rates.size()) {
    throw ModelError("piecewise target: breaks and rate tables must have equal, nonzero length");
  }
  if (breaks.front() != 0.0) throw ModelError("piecewise target: first break must be 0");
  for (std::size_t k = 1; k < breaks.size(); ++k) {
    if (!(breaks[k] > breaks[k - 1])) throw ModelError("piecewise target: breaks must increase");
  }
  TargetRateFamily f;
  f.kind_ = RateKind::time_dependent;
  f.size_ = static_cast<int>(rates.front().rows());
  f.policy_ = policy;
  for (auto& r : rates) {
    check_table(r, policy, "target");
    if (r.rows() != f.size_) throw ModelError("piecewise target: tables differ in size");
    f.leave_.push_back(r.rowwise().sum());
  }
  f.tables_ = std::move(rates);
  f.knots_ = std::move(breaks);
  return f;
}

TargetRateFamily TargetRateFamily::time_function(int size, RateFunction fn,
                                                 std::vector<double> grid, double ratio_bound,
                                                 JumpPolicy policy) {
  if (size <= 0) throw ModelError("time_function target: size must be positive");
  if (!fn) throw ModelError("time_function target: empty callable");
  if (!(ratio_bound > 0.0) || !std::isfinite(ratio_bound)) {
    throw ModelError("time_function target: ratio bound must be positive and finite");
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  TargetRateFamily f;
  f.kind_ = RateKind::time_dependent;
  f.size_ = size;
  f.policy_ = policy;
  f.fn_ = std::move(fn);
  f.knots_ = std::move(grid);
  f.ratio_bound_ = ratio_bound;
  return f;
}

TargetRateFamily TargetRateFamily::state_dependent(std::vector<Eigen::MatrixXd> per_hidden,
                                                   JumpPolicy policy) {
  if (per_hidden.empty()) throw ModelError("state-dependent target: no hidden states");
  TargetRateFamily f;
  f.kind_ = RateKind::state_dependent;
  f.size_ = static_cast<int>(per_hidden.front().rows());
  f.policy_ = policy;
  for (auto& r : per_hidden) {
    check_table(r, policy, "target");
    if (r.rows() != f.size_) throw ModelError("state-dependent target: tables differ in size");
    f.leave_.push_back(r.rowwise().sum());
  }
  f.tables_ = std::move(per_hidden);
  return f;
}

std::size_t TargetRateFamily::segment_index(double t) const {
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  return it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
}

const Eigen::MatrixXd& TargetRateFamily::table_at(RateArg u) const {
  switch (kind_) {
    case RateKind::constant:
      return tables_.front();
    case RateKind::state_dependent:
      if (u.hidden < 0 || u.hidden >= hidden_size()) throw DomainError("hidden state out of range");
      return tables_[static_cast<std::size_t>(u.hidden)];
    case RateKind::time_dependent:
      if (fn_) throw UsageError("table_at on a callable rate family");
      return tables_[segment_index(u.time)];
  }
  throw UsageError("unreachable");
}

double TargetRateFamily::rate(StateIndex i, StateIndex j, RateArg u) const {
  if (fn_) {
    if (i == j && policy_ == JumpPolicy::state_changes) return 0.0;
    const double r = fn_(i, j, u.time);
    if (r < 0.0 || !std::isfinite(r)) throw DomainError("target rate callable returned a negative or non-finite rate");
    return r;
  }
  return table_at(u)(i, j);
}

double TargetRateFamily::leave_rate(StateIndex i, RateArg u) const {
  if (fn_) {
    double total = 0.0;
    for (StateIndex j = 0; j < size_; ++j) total += rate(i, j, u);
    return total;
  }
  switch (kind_) {
    case RateKind::constant:
      return leave_.front()(i);
    case RateKind::state_dependent:
      table_at(u);  // range check
      return leave_[static_cast<std::size_t>(u.hidden)](i);
    case RateKind::time_dependent:
      return leave_[segment_index(u.time)](i);
  }
  throw UsageError("unreachable");
}

double TargetRateFamily::next_knot(double t) const {
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  return it == knots_.end() ? std::numeric_limits<double>::infinity() : *it;
}

TargetRateFamily TargetRateFamily::with_ratio_bound(double bound) const {
  TargetRateFamily f = *this;
  f.ratio_bound_ = bound;
  return f;
}

double TargetRateFamily::integrate_leave_rate(StateIndex i, double a, double b) const {
  if (!(b >= a)) throw DomainError("integration interval reversed");
  double total = 0.0;
  double lo = a;
  while (lo < b) {
    const double hi = std::min(b, next_knot(lo));
    if (fn_) {
      auto integrand = [&](double s) { return leave_rate(i, RateArg{s, 0}); };
      double err = 0.0;
      total += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, lo, hi, 15,
                                                                             1e-10, &err);
    } else {
      total += leave_rate(i, RateArg{lo, 0}) * (hi - lo);
    }
    lo = hi;
  }
  return total;
}

// ---------------------------------------------------------------- validation

bool ValidationReport::has(const std::string& condition) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.condition == condition; });
}

void ValidationReport::add(std::string condition, std::string detail) {
  violations.push_back({std::move(condition), std::move(detail)});
}

void ValidationReport::merge(const ValidationReport& other) {
  violations.insert(violations.end(), other.violations.begin(), other.violations.end());
}

namespace {

/// Arguments at which a family is inspected during validation.
std::vector<RateArg> probe_args(const TargetRateFamily& target) {
  std::vector<RateArg> args;
  switch (target.kind()) {
    case RateKind::constant:
      args.push_back({});
      break;
    case RateKind::state_dependent:
      for (int x = 0; x < target.hidden_size(); ++x) args.push_back({0.0, x});
      break;
    case RateKind::time_dependent: {
      const auto& k = target.knots();
      if (target.piecewise_constant()) {
        for (double t : k) args.push_back({t, 0});
      } else {
        args.push_back({0.0, 0});
        for (std::size_t n = 0; n < k.size(); ++n) {
          args.push_back({k[n], 0});
          if (n + 1 < k.size()) args.push_back({0.5 * (k[n] + k[n + 1]), 0});
        }
      }
      break;
    }
  }
  return args;
}

std::string arg_text(const TargetRateFamily& target, RateArg u) {
  switch (target.kind()) {
    case RateKind::constant: return "";
    case RateKind::state_dependent: return " at hidden state " + std::to_string(u.hidden);
    case RateKind::time_dependent: return " at time " + format_real(u.time);
  }
  return "";
}

}  // namespace

ValidationReport validate(const RateMatrix& reference, const TargetRateFamily& target) {
  ValidationReport report;
  const int n = reference.size();
  if (target.size() != n) {
    report.add("C1", "target and reference state spaces differ in size");
    return report;
  }
  if (reference.policy() != target.policy()) {
    report.add("C1", "target and reference disagree on self-update policy");
  }
  for (StateIndex i = 0; i < n; ++i) {
    if (!(reference.leave_rate(i) > 0.0)) {
      report.add("C3", "reference leave rate of state " + std::to_string(i) + " is zero (cemetery state)");
    }
  }
  double sup_ratio = 0.0;
  bool unbounded = false;
  for (RateArg u : probe_args(target)) {
    for (StateIndex i = 0; i < n; ++i) {
      const double leave = target.leave_rate(i, u);
      if (!(leave > 0.0)) {
        report.add("C3", "target leave rate of state " + std::to_string(i) + " is zero" + arg_text(target, u));
      }
      for (StateIndex j = 0; j < n; ++j) {
        if (target.rate(i, j, u) > 0.0 && !(reference.rate(i, j) > 0.0)) {
          report.add("dominance", "target rate " + std::to_string(i) + "->" + std::to_string(j) +
                                      " is positive but reference rate is zero" + arg_text(target, u));
          unbounded = true;
        }
      }
      if (reference.leave_rate(i) > 0.0) {
        sup_ratio = std::max(sup_ratio, leave / reference.leave_rate(i));
      } else if (leave > 0.0) {
        unbounded = true;
      }
    }
  }
  if (unbounded) {
    report.add("C2", "leave-rate ratio gamma/gamma_bar is unbounded");
  } else if (auto declared = target.declared_ratio_bound();
             declared && target.piecewise_constant() && sup_ratio > *declared * (1.0 + 1e-12)) {
    report.add("C2", "declared ratio bound " + format_real(*declared) + " is below the actual supremum " +
                         format_real(sup_ratio));
  }
  return report;
}

double bounded_transitions_constant(const RateMatrix& reference, const TargetRateFamily& target) {
  double c = reference.leave_rates().maxCoeff();
  if (!target.piecewise_constant()) return std::max(c, *target.declared_ratio_bound());
  const int n = reference.size();
  for (RateArg u : probe_args(target)) {
    for (StateIndex i = 0; i < n; ++i) {
      for (StateIndex j = 0; j < n; ++j) {
        const double g = target.rate(i, j, u);
        if (g == 0.0) continue;
        if (reference.rate(i, j) == 0.0) return std::numeric_limits<double>::infinity();
        c = std::max(c, g / reference.rate(i, j));
      }
    }
  }
  return c;
}

ValidationReport check_bounded_transitions(const RateMatrix& reference,
                                           const TargetRateFamily& target, double c) {
  ValidationReport report;
  // the leave-rate half of the condition is read against the reference rates
  const double needed = bounded_transitions_constant(reference, target);
  if (!(needed <= c)) {
    report.add("bounded_transitions", "declared constant " + format_real(c) +
                                          " is below the required " + format_real(needed));
  }
  return report;
}

// ----------------------------------------------------------------------- CSV

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  std::string s(buf);
  if (s.find_first_of(".eni") == std::string::npos) s += ".0";
  return s;
}

void write_path_csv(std::ostream& out, const ChainPath& path, const StateSpace& states) {
  out << "time,state\n";
  out << "0.0," << states.label(path.initial_state()) << '\n';
  for (const Jump& j : path.jumps()) out << format_real(j.time) << ',' << states.label(j.state) << '\n';
}

ChainPath read_path_csv(std::istream& in, const StateSpace& states, std::optional<double> horizon,
                        JumpPolicy policy) {
  std::string line;
  if (!std::getline(in, line)) throw DomainError("path CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time,state") throw DomainError("path CSV: expected header 'time,state'");
  std::vector<Jump> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DomainError("path CSV: malformed row '" + line + "'");
    std::size_t used = 0;
    const std::string time_text = line.substr(0, comma);
    double t = 0.0;
    try {
      t = std::stod(time_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != time_text.size()) throw DomainError("path CSV: bad time '" + time_text + "'");
    rows.push_back({t, states.index_of(line.substr(comma + 1))});
  }
  if (rows.empty()) throw DomainError("path CSV: missing initial row");
  if (rows.front().time != 0.0) throw DomainError("path CSV: first row must be at time 0");
  const StateIndex initial = rows.front().state;
  std::vector<Jump> jumps(rows.begin() + 1, rows.end());
  const double last = jumps.empty() ? 0.0 : jumps.back().time;
  return ChainPath(initial, std::move(jumps), horizon.value_or(last), policy);
}

}  // namespace rateshift
