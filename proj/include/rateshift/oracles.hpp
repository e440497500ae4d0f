#pragma once

// Brute-force reference implementations for tests and acceptance runs. None
// of them reuses the numerical kernels of the modules they check: simulation,
// weights, drift assembly and the matrix exponential are written out again.

#include "rateshift/chain_core.hpp"
#include "rateshift/cmom_model.hpp"
#include "rateshift/errors.hpp"
#include "rateshift/rate_change.hpp"
#include "rateshift/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace rateshift {

struct RateEstimate {
  Eigen::MatrixXd rates;
  Eigen::MatrixXd std_error;
  Eigen::MatrixXd counts;
  Eigen::VectorXd exposure;
  /// Rows with zero exposure: not estimated.
  std::vector<bool> flagged;
};

/// rate(i->j) = #(i->j) / time in i, std_error = sqrt(count) / time in i, over
/// the window [begin, end). Self-transitions are counted on the diagonal for
/// paths that record every update event.
RateEstimate empirical_generator(std::span<const ChainPath> paths, int size, double begin = 0.0,
                                 double end = std::numeric_limits<double>::infinity());

/// Observation transitions bucketed by the hidden state at the event time;
/// element x of the result estimates gamma_{i->j}(x).
std::vector<RateEstimate> empirical_generator_conditional(std::span<const ChainPath> obs_paths,
                                                          std::span<const ChainPath> hidden_paths,
                                                          int obs_size, int hidden_size);

/// exp(t q) by scaling and squaring with the degree-13 Pade approximant.
/// NumericalError when the result overflows.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> dense_expm(
    const Eigen::MatrixBase<Derived>& q, typename Derived::Scalar t) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;
  const Eigen::Index n = q.rows();
  if (q.cols() != n) throw UsageError("dense_expm needs a square matrix");
  Matrix a = q * t;
  const Scalar norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > Scalar(theta13)) {
    using std::ceil;
    using std::log2;
    squarings = static_cast<int>(ceil(log2(norm / Scalar(theta13))));
    a /= std::pow(Scalar(2), squarings);
  }
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u_inner = a6 * (Scalar(b[13]) * a6 + Scalar(b[11]) * a4 + Scalar(b[9]) * a2) +
                         Scalar(b[7]) * a6 + Scalar(b[5]) * a4 + Scalar(b[3]) * a2 + Scalar(b[1]) * id;
  const Matrix u = a * u_inner;
  const Matrix v = a6 * (Scalar(b[12]) * a6 + Scalar(b[10]) * a4 + Scalar(b[8]) * a2) +
                   Scalar(b[6]) * a6 + Scalar(b[4]) * a4 + Scalar(b[2]) * a2 + Scalar(b[0]) * id;
  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) r = r * r;
  if (!r.allFinite()) throw NumericalError("dense_expm: scale error (overflow)");
  return r;
}

struct EulerRecord {
  double t;
  Eigen::VectorXd sigma;
};

/// Explicit Euler on the sigma ODE between observation events and the
/// multiplicative update at each event. Step counts are chosen so that steps
/// land exactly on event times. Records at 0, after every event and at the
/// horizon. NumericalError when an entry exceeds 1e12 in magnitude.
std::vector<EulerRecord> euler_reference_filter(const CmomModel& model, const ChainPath& y_path, double h);

/// E^Q[A_t f(X_t) | Y] with the observation path frozen: M hidden paths from
/// the signal law, each weighted by its own likelihood ratio.
Estimate conditional_mc_sigma(const CmomModel& model, const ChainPath& y_path, const Eigen::VectorXd& f,
                              std::size_t m, const RngStream& seed_stream, unsigned threads = 1,
                              std::optional<double> t = std::nullopt);

}  // namespace rateshift
