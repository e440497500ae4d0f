#include "rateshift/oracles.hpp"

#include "rateshift/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace rateshift {

namespace {

void accumulate(RateEstimate& est, const ChainPath& path, double begin, double end,
                const ChainPath* hidden, StateIndex bucket) {
  const double stop = std::min(end, path.horizon());
  if (!(stop > begin)) return;
  auto in_bucket = [&](double s) { return hidden == nullptr || path_state_at(*hidden, s) == bucket; };

  // occupation: split every holding interval at hidden jumps when conditioning
  std::vector<double> cuts;
  if (hidden != nullptr) {
    for (const Jump& j : hidden->jumps()) cuts.push_back(j.time);
  }
  auto occupy = [&](StateIndex state, double a, double b) {
    a = std::max(a, begin);
    b = std::min(b, stop);
    if (!(b > a)) return;
    if (hidden == nullptr) {
      est.exposure(state) += b - a;
      return;
    }
    double s = a;
    for (auto it = std::upper_bound(cuts.begin(), cuts.end(), a); it != cuts.end() && *it < b; ++it) {
      if (in_bucket(s)) est.exposure(state) += *it - s;
      s = *it;
    }
    if (in_bucket(s)) est.exposure(state) += b - s;
  };

  StateIndex state = path.initial_state();
  double s = 0.0;
  for (const Jump& j : path.jumps()) {
    occupy(state, s, j.time);
    if (j.time >= begin && j.time < stop && in_bucket(j.time)) est.counts(state, j.state) += 1.0;
    state = j.state;
    s = j.time;
  }
  occupy(state, s, stop);
}

RateEstimate finish(RateEstimate est) {
  const Eigen::Index n = est.counts.rows();
  est.rates = Eigen::MatrixXd::Zero(n, n);
  est.std_error = Eigen::MatrixXd::Zero(n, n);
  est.flagged.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(est.exposure(i) > 0.0)) {
      est.flagged[static_cast<std::size_t>(i)] = true;
      continue;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      est.rates(i, j) = est.counts(i, j) / est.exposure(i);
      est.std_error(i, j) = std::sqrt(est.counts(i, j)) / est.exposure(i);
    }
  }
  return est;
}

RateEstimate empty_estimate(int size) {
  RateEstimate est;
  est.counts = Eigen::MatrixXd::Zero(size, size);
  est.exposure = Eigen::VectorXd::Zero(size);
  return est;
}

}  // namespace

RateEstimate empirical_generator(std::span<const ChainPath> paths, int size, double begin, double end) {
  if (paths.empty()) throw UsageError("empirical_generator needs at least one path");
  RateEstimate est = empty_estimate(size);
  for (const ChainPath& p : paths) accumulate(est, p, begin, end, nullptr, 0);
  return finish(std::move(est));
}

std::vector<RateEstimate> empirical_generator_conditional(std::span<const ChainPath> obs_paths,
                                                          std::span<const ChainPath> hidden_paths,
                                                          int obs_size, int hidden_size) {
  if (obs_paths.empty()) throw UsageError("empirical_generator needs at least one path");
  if (obs_paths.size() != hidden_paths.size()) throw UsageError("one hidden path per observation path");
  std::vector<RateEstimate> out;
  for (StateIndex x = 0; x < hidden_size; ++x) {
    RateEstimate est = empty_estimate(obs_size);
    for (std::size_t k = 0; k < obs_paths.size(); ++k) {
      accumulate(est, obs_paths[k], 0.0, std::numeric_limits<double>::infinity(), &hidden_paths[k], x);
    }
    out.push_back(finish(std::move(est)));
  }
  return out;
}

namespace {

Eigen::MatrixXd euler_drift(const CmomModel& model, StateIndex y) {
  const Eigen::MatrixXd& lam = model.lambda->rates();
  const int m = model.hidden_size();
  const int o = model.obs_size();
  double ref_out = 0.0;
  for (int j = 0; j < o; ++j) ref_out += model.reference.rates()(y, j);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    double hidden_out = 0.0;
    double obs_out = 0.0;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      d(j, i) = lam(i, j);
      hidden_out += lam(i, j);
    }
    for (int j = 0; j < o; ++j) obs_out += model.obs_rates.tables()[static_cast<std::size_t>(i)](y, j);
    d(i, i) = ref_out - obs_out - hidden_out;
  }
  return d;
}

}  // namespace

std::vector<EulerRecord> euler_reference_filter(const CmomModel& model, const ChainPath& y_path, double h) {
  if (!model.lambda) throw UsageError("Euler oracle needs a finite hidden generator");
  if (model.obs_rates.kind() != RateKind::state_dependent) throw UsageError("Euler oracle needs tabulated rates");
  if (!(h > 0.0)) throw DomainError("Euler step must be positive");
  std::vector<EulerRecord> out;
  Eigen::VectorXd sigma = model.mu;
  out.push_back({0.0, sigma});
  Eigen::VectorXd next(sigma.size());

  auto integrate = [&](StateIndex y, double a, double b) {
    if (!(b > a)) return;
    const Eigen::MatrixXd d = euler_drift(model, y);
    const long steps = std::max(1L, static_cast<long>(std::ceil((b - a) / h - 1e-9)));
    const double dt = (b - a) / static_cast<double>(steps);
    for (long k = 0; k < steps; ++k) {
      next.noalias() = d * sigma;
      sigma += dt * next;
      if (sigma.cwiseAbs().maxCoeff() > 1e12) throw NumericalError("Euler oracle unstable: reduce the step");
    }
  };

  StateIndex y = y_path.initial_state();
  double s = 0.0;
  for (const Jump& j : y_path.jumps()) {
    integrate(y, s, j.time);
    const double den = model.reference.rates()(y, j.state);
    if (!(den > 0.0)) throw AbsoluteContinuityError("observed transition has zero reference rate");
    for (int i = 0; i < model.hidden_size(); ++i) {
      sigma(i) *= model.obs_rates.tables()[static_cast<std::size_t>(i)](y, j.state) / den;
    }
    out.push_back({j.time, sigma});
    y = j.state;
    s = j.time;
  }
  integrate(y, s, y_path.horizon());
  out.push_back({y_path.horizon(), sigma});
  return out;
}

namespace {

struct HiddenSample {
  std::vector<double> times;   // jump times
  std::vector<StateIndex> states;  // states[k] holds on [times[k-1], times[k])
};

HiddenSample gillespie(const Eigen::MatrixXd& lam, const Eigen::VectorXd& mu, double horizon, RngStream& rng) {
  HiddenSample out;
  const double u = rng.uniform();
  StateIndex x = 0;
  double cumulative = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (mu(k) <= 0.0) continue;
    x = static_cast<StateIndex>(k);
    cumulative += mu(k);
    if (u <= cumulative) break;
  }
  out.states.push_back(x);
  double t = 0.0;
  for (;;) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < lam.cols(); ++j) {
      if (j != x) total += lam(x, j);
    }
    if (total <= 0.0) break;
    t += -std::log(rng.uniform()) / total;
    if (t > horizon) break;
    double pick = rng.uniform() * total;
    StateIndex nx = -1;
    for (Eigen::Index j = 0; j < lam.cols(); ++j) {
      if (j == x || lam(x, j) == 0.0) continue;
      nx = static_cast<StateIndex>(j);
      pick -= lam(x, j);
      if (pick <= 0.0) break;
    }
    x = nx;
    out.times.push_back(t);
    out.states.push_back(x);
  }
  return out;
}

}  // namespace

Estimate conditional_mc_sigma(const CmomModel& model, const ChainPath& y_path, const Eigen::VectorXd& f,
                              std::size_t m, const RngStream& seed_stream, unsigned threads,
                              std::optional<double> t) {
  if (!model.lambda) throw UsageError("conditional Monte Carlo needs a finite hidden generator");
  if (model.obs_rates.kind() != RateKind::state_dependent) throw UsageError("conditional Monte Carlo needs tabulated rates");
  if (m == 0) throw DomainError("conditional Monte Carlo needs at least one sample");
  if (f.size() != model.hidden_size()) throw UsageError("f must have one entry per hidden state");
  const double end = t.value_or(y_path.horizon());
  const Eigen::MatrixXd& lam = model.lambda->rates();
  const Eigen::MatrixXd& ref = model.reference.rates();
  const std::vector<Eigen::MatrixXd>& tab = model.obs_rates.tables();
  const int o = model.obs_size();

  // observation breakpoints within [0, end]
  std::vector<double> y_times;
  std::vector<StateIndex> y_states{y_path.initial_state()};
  for (const Jump& j : y_path.jumps()) {
    if (j.time > end) break;
    y_times.push_back(j.time);
    y_states.push_back(j.state);
  }

  std::vector<double> terms(m);
  parallel_for(m, threads, [&](std::size_t k) {
    RngStream rng = seed_stream.fork(k);
    const HiddenSample x = gillespie(lam, model.mu, end, rng);
    double log_a = 0.0;
    std::size_t xi = 0;
    std::size_t yi = 0;
    double s = 0.0;
    const double inf = std::numeric_limits<double>::infinity();
    for (;;) {
      const double nx = xi < x.times.size() ? x.times[xi] : inf;
      const double ny = yi < y_times.size() ? y_times[yi] : inf;
      const double next = std::min({nx, ny, end});
      const StateIndex hs = x.states[xi];
      const StateIndex ys = y_states[yi];
      double out_ref = 0.0;
      double out_tgt = 0.0;
      for (int j = 0; j < o; ++j) {
        out_ref += ref(ys, j);
        out_tgt += tab[static_cast<std::size_t>(hs)](ys, j);
      }
      log_a += (out_ref - out_tgt) * (next - s);
      s = next;
      if (nx == inf && ny == inf) break;
      if (ny <= nx) {
        const StateIndex to = y_states[yi + 1];
        const double num = tab[static_cast<std::size_t>(hs)](ys, to);
        log_a += num > 0.0 ? std::log(num / ref(ys, to)) : -inf;
        ++yi;
      } else {
        ++xi;
      }
    }
    terms[k] = std::exp(log_a) * f(x.states.back());
  });
  return mean_and_stderr(terms);
}

}  // namespace rateshift
