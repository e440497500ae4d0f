#pragma once

#include "rateshift/cmom_model.hpp"
#include "rateshift/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace rateshift {

struct Particle {
  StateIndex hidden_state;
  double log_weight;  // log A^i, relative to Ensemble::total_log_offset
};

/// Particle approximation of the unnormalized filter. Estimates always divide
/// by the initial count n0, not by the current number of particles.
struct Ensemble {
  std::vector<Particle> particles;
  std::size_t n0 = 0;
  double t = 0.0;
  double total_log_offset = 0.0;
  /// Number of evolve steps taken; keys the per-particle random substreams.
  std::uint64_t generation = 0;
  /// Digest of the observation segments consumed so far.
  std::uint64_t observation_hash = 0xcbf29ce484222325ULL;
};

struct BranchingConfig {
  double r = 1.5;
  double v_halfwidth = 0.1;
};

/// n i.i.d. draws from mu, all weights 1.
Ensemble init_ensemble(const CmomModel& model, std::size_t n, const RngStream& seed_stream);

/// Moves every particle along the signal law on (ensemble.t, t_next] and adds
/// the weight increment int (gamma_bar_{y->} - gamma_{y->}(X_s)) ds plus, when
/// the observation jumps at t_next, log(gamma_{y->y'}(X_{t_next}) / gamma_bar_{y->y'}).
/// UsageError unless y_path has exactly one jump in (t, t_next], located at t_next.
Ensemble evolve(Ensemble ensemble, const CmomModel& model, const ChainPath& y_path, double t_next,
                const RngStream& seed_stream, unsigned threads = 1);

/// Same as evolve, for an interval with no observation jump (the tail after
/// the last observation event).
Ensemble evolve_without_jump(Ensemble ensemble, const CmomModel& model, const ChainPath& y_path,
                             double t_next, const RngStream& seed_stream, unsigned threads = 1);

/// Residual branching: a particle whose weight plus its smoothing uniform
/// leaves (A_bar / r, r A_bar) is replaced by floor(A/A_bar) + Bernoulli(frac)
/// copies of weight A_bar; otherwise it is kept as is.
Ensemble resample_residual(const Ensemble& ensemble, const BranchingConfig& config,
                           const RngStream& seed_stream);

/// log of (1/n0) sum A^i.
double log_unnormalized_total(const Ensemble& ensemble);
/// (1/n0) sum A^i f(X^i).
double unnormalized_estimate(const Ensemble& ensemble, const std::function<double(StateIndex)>& f);
/// S^N(f) / S^N(1). DegenerateFilterError when S^N(1) = 0.
double normalized_estimate(const Ensemble& ensemble, const std::function<double(StateIndex)>& f);
/// Normalized filter on every singleton of a finite hidden space.
Eigen::VectorXd normalized_distribution(const Ensemble& ensemble, int hidden_size);

/// S^{N,A}(1) / S^{N,B}(1); UsageError unless both consumed the same observations.
double bayes_factor(const Ensemble& a, const Ensemble& b);
double log_bayes_factor(const Ensemble& a, const Ensemble& b);

struct ParticleRecord {
  double t;
  std::size_t particle_count;
  double log_sn_one;
  Eigen::VectorXd pi;
};

struct ParticleRunOptions {
  std::size_t particles = 1000;
  BranchingConfig branching;
  /// Weighted filter only (r = infinity): never branch.
  bool branching_enabled = true;
  unsigned threads = 1;
};

struct ParticleRun {
  std::vector<ParticleRecord> records;  // one per observation event, then the horizon
  Ensemble final_ensemble;
};

/// Full filter over an observation path: evolve and resample at every
/// observation event, then evolve to the path horizon.
ParticleRun run_particle_filter(const CmomModel& model, const ChainPath& y_path,
                                const ParticleRunOptions& options, const RngStream& seed_stream);

}  // namespace rateshift
