// Randomized invariant checks. Cases come from a fixed-seed generator so a
// failure replays exactly; the case index is printed on failure.

#include "fixtures.hpp"

#include "rateshift/direct_filter.hpp"
#include "rateshift/particle_filter.hpp"
#include "rateshift/rate_change.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace rateshift;

namespace {

constexpr int kCases = 200;

struct Gen {
  RngStream rng;

  int integer(int lo, int hi) { return lo + static_cast<int>(rng.uniform() * (hi - lo + 1)); }

  Eigen::MatrixXd rates(int n, double lo, double hi, double zero_fraction = 0.0) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && rng.uniform() >= zero_fraction) r(i, j) = rng.uniform(lo, hi);
      }
      if (r.row(i).sum() == 0.0) r(i, (i + 1) % n) = rng.uniform(lo, hi);
    }
    return r;
  }

  Eigen::VectorXd simplex(int n) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = rng.exponential(1.0);
    p /= p.sum();
    p(n - 1) = 1.0 - p.head(n - 1).sum();
    return p;
  }

  ChainPath path(int n, double horizon) {
    std::vector<Jump> jumps;
    double t = 0.0;
    StateIndex x = integer(0, n - 1);
    const StateIndex x0 = x;
    for (;;) {
      t += rng.exponential(2.0);
      if (t > horizon) break;
      StateIndex next = integer(0, n - 2);
      if (next >= x) ++next;
      x = next;
      jumps.push_back({t, x});
    }
    return ChainPath(x0, std::move(jumps), horizon);
  }

  CmomModel cmom(int m, int o) {
    std::vector<Eigen::MatrixXd> tables;
    const Eigen::MatrixXd ref = rates(o, 0.5, 2.0);
    for (int x = 0; x < m; ++x) tables.push_back(rates(o, 0.1, 3.0).cwiseProduct((ref.array() > 0).cast<double>().matrix()));
    auto family = TargetRateFamily::state_dependent(std::move(tables));
    RateMatrix reference(ref);
    double bound = 0.0;
    for (int x = 0; x < m; ++x) {
      for (int i = 0; i < o; ++i) bound = std::max(bound, family.leave_rate(i, RateArg{0.0, x}) / reference.leave_rate(i));
    }
    return CmomModel{
        .hidden_states = StateSpace::indexed(m),
        .obs_states = StateSpace::indexed(o),
        .lambda = RateMatrix(rates(m, 0.1, 2.0, 0.3)),
        .simulator = {},
        .obs_rates = std::move(family),
        .reference = std::move(reference),
        .mu = simplex(m),
        .init_obs = simplex(o),
        .ratio_bound = bound,
    };
  }
};

}  // namespace

TEST_SUITE("properties") {

TEST_CASE("jump_count differences count jumps in the half-open interval") {
  Gen g{RngStream(1001, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const ChainPath p = g.path(g.integer(2, 5), 5.0);
    const double s = g.rng.uniform(0.0, 5.0);
    const double t = g.rng.uniform(s, 5.0);
    std::size_t inside = 0;
    for (const Jump& j : p.jumps()) inside += (j.time > s && j.time <= t) ? 1 : 0;
    CHECK(jump_count(p, t) - jump_count(p, s) == inside);
  }
}

TEST_CASE("path value changes exactly at jump times") {
  Gen g{RngStream(1002, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const ChainPath p = g.path(g.integer(2, 5), 5.0);
    StateIndex before = p.initial_state();
    for (const Jump& j : p.jumps()) {
      CHECK(path_state_at(p, std::nextafter(j.time, 0.0)) == before);
      CHECK(path_state_at(p, j.time) == j.state);
      before = j.state;
    }
  }
}

TEST_CASE("target equal to reference never violates C2 or dominance") {
  Gen g{RngStream(1003, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const Eigen::MatrixXd r = g.rates(g.integer(2, 6), 0.1, 5.0, 0.4);
    const ValidationReport rep = validate(RateMatrix(r), TargetRateFamily::constant(r));
    CHECK_FALSE(rep.has("C2"));
    CHECK_FALSE(rep.has("dominance"));
  }
}

TEST_CASE("incremental composition reproduces the whole-path weight") {
  Gen g{RngStream(1004, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const int n = g.integer(2, 5);
    const Eigen::MatrixXd ref = g.rates(n, 0.5, 2.0);
    const Eigen::MatrixXd tgt = g.rates(n, 0.5, 2.0).cwiseProduct((ref.array() > 0).cast<double>().matrix());
    const RateMatrix reference(ref);
    const auto target = TargetRateFamily::piecewise_in_time({0.0, 1.5}, {tgt, ref});
    RngStream rng(1004, static_cast<std::uint64_t>(c) + 1);
    const ChainPath p = simulate_reference_chain(reference, Eigen::VectorXd::Constant(n, 1.0 / n), 4.0, rng);
    LogWeight w{0.0, 0.0};
    for (std::size_t k = 1; k <= p.size(); ++k) w = incremental_log_weight(w, p, k, target, reference);
    w = advance_log_weight(w, p, p.horizon(), target, reference);
    const LogWeight whole = log_weight(p, target, reference);
    CHECK(std::abs(w.log_a - whole.log_a) <= 1e-12);
    if (std::isfinite(whole.log_a)) CHECK(whole.value() > 0.0);
  }
}

TEST_CASE("CSV round trip of random paths") {
  Gen g{RngStream(1005, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const int n = g.integer(2, 5);
    const ChainPath p = g.path(n, 5.0);
    std::ostringstream out;
    write_path_csv(out, p, StateSpace::indexed(n));
    std::istringstream in(out.str());
    CHECK(read_path_csv(in, StateSpace::indexed(n), 5.0) == p);
  }
}

TEST_CASE("offspring counts bracket the weight ratio") {
  Gen g{RngStream(1006, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    Ensemble e;
    const int n = g.integer(1, 30);
    e.n0 = static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) e.particles.push_back({i, std::log(g.rng.exponential(1.0))});
    double total = 0.0;
    for (const Particle& p : e.particles) total += std::exp(p.log_weight);
    const double abar = total / n;
    const Ensemble out = resample_residual(e, {1.5, 0.1}, RngStream(1006, static_cast<std::uint64_t>(c) + 1));
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (const Particle& p : out.particles) ++counts[static_cast<std::size_t>(p.hidden_state)];
    for (int i = 0; i < n; ++i) {
      const double ratio = std::exp(e.particles[static_cast<std::size_t>(i)].log_weight) / abar;
      const int k = counts[static_cast<std::size_t>(i)];
      const bool kept = k == 1;
      const bool branched = k == static_cast<int>(std::floor(ratio)) || k == static_cast<int>(std::floor(ratio)) + 1;
      CHECK((kept || branched));
    }
  }
}

TEST_CASE("direct filter stays nonnegative with normalized pi") {
  Gen g{RngStream(1007, 0)};
  for (int c = 0; c < 60; ++c) {
    CAPTURE(c);
    const CmomModel m = g.cmom(g.integer(2, 5), g.integer(2, 3));
    RngStream rng(1007, static_cast<std::uint64_t>(c) + 1);
    const ChainPath y = simulate_joint_target(m, 4.0, rng).obs;
    std::vector<DirectRecord> recs;
    try {
      recs = run_direct_filter(m, y, {1.0, 2.0, 3.0});
    } catch (const DegenerateFilterError&) {
      continue;
    }
    for (const DirectRecord& r : recs) {
      CHECK(r.filter.sigma.minCoeff() >= 0.0);
      CHECK(std::abs(r.pi().sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("normalized jump update on random models") {
  Gen g{RngStream(1008, 0)};
  for (int c = 0; c < kCases; ++c) {
    CAPTURE(c);
    const int m_size = g.integer(2, 5);
    const CmomModel m = g.cmom(m_size, 2);
    FilterVector fv{g.simplex(m_size), 0.0, 0.0, 0};
    Eigen::VectorXd lik(m_size);
    for (int i = 0; i < m_size; ++i) lik(i) = m.obs_rates.rate(0, 1, RateArg{0.0, i});
    if (fv.sigma.dot(lik) <= 0.0) continue;
    const Eigen::VectorXd expected = fv.pi().cwiseProduct(lik) / fv.pi().dot(lik);
    CHECK((jump_update(fv, m, 0, 1).pi() - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("joint weight has unit mean under the reference law") {
  Gen g{RngStream(1009, 0)};
  for (int c = 0; c < 5; ++c) {
    CAPTURE(c);
    const CmomModel m = g.cmom(g.integer(2, 3), 2);
    const std::size_t runs = 20000;
    std::vector<double> w(runs);
    for (std::size_t k = 0; k < runs; ++k) {
      RngStream rng(1009 + static_cast<std::uint64_t>(c), k);
      const JointPath p = simulate_joint_reference(m, 1.0, rng);
      w[k] = joint_log_weight(p.hidden, p.obs, m).value();
    }
    const Estimate e = mean_and_stderr(w);
    CHECK(std::abs(e.value - 1.0) <= 3.0 * e.std_error);
  }
}

}  // TEST_SUITE
