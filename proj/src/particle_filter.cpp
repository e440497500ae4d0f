#include "rateshift/particle_filter.hpp"

#include "rateshift/errors.hpp"
#include "rateshift/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace rateshift {

namespace {

constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kEvolveTag = 2;
constexpr std::uint64_t kResampleTag = 3;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t fnv1a(std::uint64_t hash, std::uint64_t word) {
  for (int b = 0; b < 8; ++b) {
    hash ^= (word >> (8 * b)) & 0xffU;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

Ensemble evolve_impl(Ensemble ensemble, const CmomModel& model, const ChainPath& y_path,
                     double t_next, bool expect_jump, const RngStream& seed_stream, unsigned threads) {
  const double t0 = ensemble.t;
  if (!(t_next >= t0)) throw UsageError("evolve: target time precedes the ensemble time");
  if (t_next > y_path.horizon()) throw UsageError("evolve: target time beyond the observation horizon");
  const std::size_t lo = jump_count(y_path, t0);
  const std::size_t hi = jump_count(y_path, t_next);
  if (expect_jump) {
    if (hi - lo != 1 || y_path.jumps()[lo].time != t_next) {
      throw UsageError("evolve: observation segment must contain exactly one transition, at its end");
    }
  } else if (hi != lo) {
    throw UsageError("evolve_without_jump: observation segment contains a transition");
  }
  const StateIndex y = path_state_at(y_path, t0);
  const int m = model.hidden_size();

  Eigen::VectorXd gap(m);
  Eigen::VectorXd jump_log(m);
  for (StateIndex x = 0; x < m; ++x) {
    gap(x) = model.reference.leave_rate(y) - model.obs_rates.leave_rate(y, RateArg{0.0, x});
    jump_log(x) = 0.0;
    if (expect_jump) {
      const StateIndex y_new = y_path.jumps()[lo].state;
      jump_log(x) = jump_log_ratio(y, y_new, RateArg{t_next, x}, model.obs_rates, model.reference);
    }
  }

  const std::uint64_t generation = ensemble.generation + 1;
  parallel_for(ensemble.particles.size(), threads, [&](std::size_t i) {
    Particle& p = ensemble.particles[i];
    RngStream rng = seed_stream.fork(stream_key(kEvolveTag, generation, i));
    const std::vector<Jump> jumps = simulate_hidden_jumps(model, p.hidden_state, t0, t_next, rng);
    double increment = 0.0;
    double s = t0;
    StateIndex x = p.hidden_state;
    for (const Jump& j : jumps) {
      increment += gap(x) * (j.time - s);
      s = j.time;
      x = j.state;
    }
    increment += gap(x) * (t_next - s) + jump_log(x);
    p.hidden_state = x;
    p.log_weight += increment;
  });

  ensemble.t = t_next;
  ensemble.generation = generation;
  std::uint64_t h = fnv1a(ensemble.observation_hash, std::bit_cast<std::uint64_t>(t_next));
  h = fnv1a(h, static_cast<std::uint64_t>(y));
  h = fnv1a(h, expect_jump ? static_cast<std::uint64_t>(y_path.jumps()[lo].state) : ~0ULL);
  ensemble.observation_hash = h;
  return ensemble;
}

/// Max log weight and log sum exp(lw - max); max is -inf for an empty or all-zero ensemble.
std::pair<double, double> log_sum(const Ensemble& ensemble) {
  double top = kNegInf;
  for (const Particle& p : ensemble.particles) top = std::max(top, p.log_weight);
  if (top == kNegInf) return {kNegInf, kNegInf};
  double sum = 0.0;
  for (const Particle& p : ensemble.particles) sum += std::exp(p.log_weight - top);
  return {top, std::log(sum)};
}

}  // namespace

Ensemble init_ensemble(const CmomModel& model, std::size_t n, const RngStream& seed_stream) {
  if (n == 0) throw DomainError("ensemble needs at least one particle");
  check_probability_vector(model.mu, "mu");
  Ensemble e;
  e.n0 = n;
  e.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng = seed_stream.fork(stream_key(kInitTag, i));
    e.particles[i] = {sample_initial(model.mu, rng), 0.0};
  }
  return e;
}

Ensemble evolve(Ensemble ensemble, const CmomModel& model, const ChainPath& y_path, double t_next,
                const RngStream& seed_stream, unsigned threads) {
  return evolve_impl(std::move(ensemble), model, y_path, t_next, true, seed_stream, threads);
}

Ensemble evolve_without_jump(Ensemble ensemble, const CmomModel& model, const ChainPath& y_path,
                             double t_next, const RngStream& seed_stream, unsigned threads) {
  return evolve_impl(std::move(ensemble), model, y_path, t_next, false, seed_stream, threads);
}

Ensemble resample_residual(const Ensemble& ensemble, const BranchingConfig& config,
                           const RngStream& seed_stream) {
  if (!(config.r > 1.0)) throw DomainError("branching parameter r must exceed 1");
  if (!(config.v_halfwidth >= 0.0)) throw DomainError("smoothing half-width must be nonnegative");
  const auto [top, log_total] = log_sum(ensemble);
  if (top == kNegInf) throw DegenerateFilterError("resample: ensemble carries no weight");
  // log A_bar relative to the ensemble offset
  const double log_abar = top + log_total - std::log(static_cast<double>(ensemble.n0));
  const double abar = std::exp(log_abar + ensemble.total_log_offset);
  const double lower = abar / config.r;
  const double upper = abar * config.r;

  Ensemble out;
  out.n0 = ensemble.n0;
  out.t = ensemble.t;
  out.total_log_offset = ensemble.total_log_offset;
  out.generation = ensemble.generation;
  out.observation_hash = ensemble.observation_hash;
  out.particles.reserve(ensemble.particles.size());
  for (std::size_t i = 0; i < ensemble.particles.size(); ++i) {
    const Particle& p = ensemble.particles[i];
    RngStream rng = seed_stream.fork(stream_key(kResampleTag, ensemble.generation, i));
    const double v = rng.uniform(-config.v_halfwidth, config.v_halfwidth);
    const double u = rng.uniform();
    const double smoothed = std::exp(p.log_weight + ensemble.total_log_offset) + v;
    if (smoothed > lower && smoothed < upper) {
      out.particles.push_back(p);
      continue;
    }
    const double ratio = std::exp(p.log_weight - log_abar);
    const double whole = std::floor(ratio);
    const std::size_t copies = static_cast<std::size_t>(whole) + (u <= ratio - whole ? 1 : 0);
    for (std::size_t c = 0; c < copies; ++c) out.particles.push_back({p.hidden_state, log_abar});
  }
  if (out.particles.empty()) {
    std::ostringstream msg;
    msg << "resample: every particle left zero offspring; log A_bar = " << log_abar << ", log weights:";
    for (std::size_t i = 0; i < std::min<std::size_t>(ensemble.particles.size(), 8); ++i) {
      msg << ' ' << ensemble.particles[i].log_weight;
    }
    throw DegenerateFilterError(msg.str());
  }
  return out;
}

double log_unnormalized_total(const Ensemble& ensemble) {
  const auto [top, log_total] = log_sum(ensemble);
  if (top == kNegInf) return kNegInf;
  return ensemble.total_log_offset + top + log_total - std::log(static_cast<double>(ensemble.n0));
}

double unnormalized_estimate(const Ensemble& ensemble, const std::function<double(StateIndex)>& f) {
  const auto [top, log_total] = log_sum(ensemble);
  if (top == kNegInf) return 0.0;
  double sum = 0.0;
  for (const Particle& p : ensemble.particles) sum += std::exp(p.log_weight - top) * f(p.hidden_state);
  return std::exp(ensemble.total_log_offset + top - std::log(static_cast<double>(ensemble.n0))) * sum;
}

double normalized_estimate(const Ensemble& ensemble, const std::function<double(StateIndex)>& f) {
  const auto [top, log_total] = log_sum(ensemble);
  if (top == kNegInf) throw DegenerateFilterError("normalized estimate of an ensemble with zero total weight");
  double num = 0.0;
  double den = 0.0;
  for (const Particle& p : ensemble.particles) {
    const double w = std::exp(p.log_weight - top);
    num += w * f(p.hidden_state);
    den += w;
  }
  return num / den;
}

Eigen::VectorXd normalized_distribution(const Ensemble& ensemble, int hidden_size) {
  const auto [top, log_total] = log_sum(ensemble);
  if (top == kNegInf) throw DegenerateFilterError("normalized filter of an ensemble with zero total weight");
  Eigen::VectorXd pi = Eigen::VectorXd::Zero(hidden_size);
  for (const Particle& p : ensemble.particles) pi(p.hidden_state) += std::exp(p.log_weight - top);
  return pi / pi.sum();
}

double log_bayes_factor(const Ensemble& a, const Ensemble& b) {
  if (a.observation_hash != b.observation_hash || a.t != b.t) {
    throw UsageError("Bayes factor between runs that consumed different observations");
  }
  return log_unnormalized_total(a) - log_unnormalized_total(b);
}

double bayes_factor(const Ensemble& a, const Ensemble& b) { return std::exp(log_bayes_factor(a, b)); }

ParticleRun run_particle_filter(const CmomModel& model, const ChainPath& y_path,
                                const ParticleRunOptions& options, const RngStream& seed_stream) {
  ParticleRun run;
  Ensemble ensemble = init_ensemble(model, options.particles, seed_stream);
  auto record = [&] {
    run.records.push_back({ensemble.t, ensemble.particles.size(), log_unnormalized_total(ensemble),
                           normalized_distribution(ensemble, model.hidden_size())});
  };
  for (const Jump& j : y_path.jumps()) {
    ensemble = evolve(std::move(ensemble), model, y_path, j.time, seed_stream, options.threads);
    if (options.branching_enabled) ensemble = resample_residual(ensemble, options.branching, seed_stream);
    record();
  }
  if (y_path.horizon() > ensemble.t || run.records.empty()) {
    ensemble = evolve_without_jump(std::move(ensemble), model, y_path, y_path.horizon(), seed_stream,
                                   options.threads);
    record();
  }
  run.final_ensemble = std::move(ensemble);
  return run;
}

}  // namespace rateshift
