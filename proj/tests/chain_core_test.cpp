#include "fixtures.hpp"

#include "rateshift/chain_core.hpp"
#include "rateshift/errors.hpp"

#include <doctest.h>

#include <sstream>

using namespace rateshift;
using fixtures::mat2;

TEST_SUITE("chain_core") {

TEST_CASE("state space labels round trip") {
  const StateSpace s({"low", "high"});
  CHECK(s.size() == 2);
  CHECK(s.index_of("high") == 1);
  CHECK_THROWS_AS(s.index_of("mid"), DomainError);
  CHECK_THROWS_AS(StateSpace({"a", "a"}), ModelError);
  CHECK_THROWS_AS(StateSpace(std::vector<std::string>{}), ModelError);
  CHECK(StateSpace::indexed(3).label(2) == "2");
}

TEST_CASE("path construction rejects malformed jumps") {
  CHECK_THROWS_AS(ChainPath(0, {{1.0, 1}, {1.0, 0}}, 2.0), DomainError);
  CHECK_THROWS_AS(ChainPath(0, {{0.0, 1}}, 2.0), DomainError);
  CHECK_THROWS_AS(ChainPath(0, {{3.0, 1}}, 2.0), DomainError);
  CHECK_THROWS_AS(ChainPath(0, {{1.0, 0}}, 2.0), DomainError);
  CHECK_NOTHROW(ChainPath(0, {{1.0, 0}}, 2.0, JumpPolicy::observable_updates));
}

TEST_CASE("path_state_at is right-continuous") {
  const ChainPath none(1, {}, 5.0);
  CHECK(path_state_at(none, 0.0) == 1);
  CHECK(path_state_at(none, 5.0) == 1);

  const ChainPath one(0, {{1.0, 1}}, 2.0);
  CHECK(path_state_at(one, 1.0) == 1);
  CHECK(path_state_at(one, std::nextafter(1.0, 0.0)) == 0);
  CHECK_THROWS_AS(path_state_at(one, 2.5), DomainError);
  CHECK_THROWS_AS(path_state_at(one, -0.1), DomainError);
}

TEST_CASE("jump_count counts jumps at or before t") {
  const ChainPath none(0, {}, 3.0);
  CHECK(jump_count(none, 2.0) == 0);
  const ChainPath two(0, {{1.0, 1}, {2.0, 0}}, 3.0);
  CHECK(jump_count(two, 1.5) == 1);
  CHECK(jump_count(two, 1.0) == 1);
  CHECK(jump_count(two, 2.0) == 2);
  CHECK(two.state_before(2) == 1);
}

TEST_CASE("rate matrix leave rates and generator") {
  const RateMatrix r(mat2(0.0, 1.5, 0.25, 0.0));
  CHECK(r.leave_rate(0) == doctest::Approx(1.5));
  CHECK(r.leave_rate(1) == doctest::Approx(0.25));
  CHECK(r.generator()(0, 0) == doctest::Approx(-1.5));
  CHECK(r.row(1)[0] == 0.25);
  CHECK_THROWS_AS(RateMatrix(mat2(1.0, 1.0, 1.0, 0.0)), ModelError);
  CHECK_THROWS_AS(RateMatrix(mat2(0.0, -1.0, 1.0, 0.0)), ModelError);

  const RateMatrix updates(mat2(0.5, 0.5, 0.25, 0.75), JumpPolicy::observable_updates);
  CHECK(updates.leave_rate(0) == doctest::Approx(1.0));
  CHECK(updates.generator()(0, 0) == doctest::Approx(-0.5));
}

TEST_CASE("validate flags cemetery states") {
  const RateMatrix ref(mat2(0.0, 0.0, 1.0, 0.0));
  const ValidationReport report = validate(ref, TargetRateFamily::constant(mat2(0.0, 0.0, 1.0, 0.0)));
  CHECK(report.has("C3"));
  CHECK_FALSE(report.ok());
}

TEST_CASE("validate flags targets not dominated by the reference") {
  Eigen::MatrixXd ref(3, 3);
  ref << 0, 0, 1,
         1, 0, 0,
         1, 0, 0;
  Eigen::MatrixXd tgt = ref;
  tgt(0, 1) = 1.0;
  const ValidationReport report = validate(RateMatrix(ref), TargetRateFamily::constant(tgt));
  CHECK(report.has("dominance"));
  CHECK(report.has("C2"));
}

TEST_CASE("target equal to reference validates") {
  const Eigen::MatrixXd g = mat2(0.0, 1.0, 1.0, 0.0);
  CHECK(validate(RateMatrix(g), TargetRateFamily::constant(g)).ok());
}

TEST_CASE("declared ratio bound below the actual supremum is a C2 violation") {
  const RateMatrix ref(mat2(0.0, 1.0, 1.0, 0.0));
  const auto tgt = TargetRateFamily::constant(mat2(0.0, 3.0, 1.0, 0.0)).with_ratio_bound(2.0);
  CHECK(validate(ref, tgt).has("C2"));
  CHECK(validate(ref, tgt.with_ratio_bound(3.0)).ok());
}

TEST_CASE("bounded-transitions constant") {
  const RateMatrix ref(mat2(0.0, 2.0, 0.5, 0.0));
  const auto tgt = TargetRateFamily::constant(mat2(0.0, 1.0, 1.5, 0.0));
  // max(max leave rate 2, max ratio 3)
  CHECK(bounded_transitions_constant(ref, tgt) == doctest::Approx(3.0));
  CHECK(check_bounded_transitions(ref, tgt, 3.0).ok());
  CHECK(check_bounded_transitions(ref, tgt, 2.5).has("bounded_transitions"));
}

TEST_CASE("piecewise-in-time family") {
  const auto f = TargetRateFamily::piecewise_in_time({0.0, 1.0}, {mat2(0, 1, 1, 0), mat2(0, 3, 2, 0)});
  CHECK(f.rate(0, 1, RateArg{0.5, 0}) == 1.0);
  CHECK(f.rate(0, 1, RateArg{1.0, 0}) == 3.0);
  CHECK(f.next_knot(0.2) == 1.0);
  CHECK(std::isinf(f.next_knot(1.0)));
  CHECK(f.integrate_leave_rate(0, 0.5, 2.0) == doctest::Approx(0.5 * 1.0 + 1.0 * 3.0));
  CHECK_THROWS_AS(TargetRateFamily::piecewise_in_time({0.5}, {mat2(0, 1, 1, 0)}), ModelError);
}

TEST_CASE("callable family integrates by quadrature") {
  const auto f = TargetRateFamily::time_function(
      2, [](StateIndex i, StateIndex j, double t) { return i == j ? 0.0 : 1.0 + std::sin(t); }, {0.0, 10.0}, 2.0);
  CHECK(f.integrate_leave_rate(0, 0.0, 3.0) == doctest::Approx(3.0 + 1.0 - std::cos(3.0)).epsilon(1e-10));
}

TEST_CASE("path CSV round trip keeps full precision") {
  const StateSpace s({"a", "b"});
  const ChainPath p(0, {{0.1234567890123456, 1}, {2.0, 0}}, 3.0);
  std::ostringstream out;
  write_path_csv(out, p, s);
  CHECK(out.str().rfind("time,state\n0.0,a\n", 0) == 0);
  CHECK(out.str().find("2.0,a") != std::string::npos);
  std::istringstream in(out.str());
  const ChainPath back = read_path_csv(in, s, 3.0);
  CHECK(back == p);
  std::istringstream bad("time,state\n0.0,a\nxyz,b\n");
  CHECK_THROWS_AS(read_path_csv(bad, s), DomainError);
}

}  // TEST_SUITE
