#pragma once

// Model documents. Every document carries `schema_version` (currently 1) and
// `model_type`; unknown fields are rejected with ModelError.
//
//   chain: states, gamma_bar (n x n), gamma (n x n, or a list of tables with
//          gamma_breaks for piecewise-in-time rates), init, optional ratio_bound
//   cmom:  hidden_states, obs_states, lambda (m x m), gamma_bar (o x o),
//          gamma (m tables of o x o), mu, init_obs, optional ratio_bound
//   cthmm: hidden_states, obs_states, lambda, gamma_bar (scalar), q_bar (o),
//          gamma (m update rates), q (m x o emission laws), mu, init_obs
//
// State lists are arrays of labels or a count n (labels "0".."n-1").

#include "rateshift/chain_core.hpp"
#include "rateshift/cmom_model.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>

namespace rateshift {

/// A single chain with a reference (proposal) law and target rates.
struct ChainModel {
  StateSpace states;
  RateMatrix reference;
  TargetRateFamily target;
  Eigen::VectorXd init;
};

struct ModelDocument {
  std::string model_type;
  /// FNV-1a digest of the canonical (key-sorted, compact) JSON text, in hex.
  std::string hash;
  std::optional<ChainModel> chain;
  std::optional<CmomModel> cmom;  // also filled for cthmm documents, via conversion
  std::optional<CthmmModel> cthmm;
};

ModelDocument parse_model(const std::string& text);
ModelDocument load_model(const std::string& path);

/// sup over hidden and observation states of gamma_{i->}(x) / gamma_bar_{i->}.
double observed_ratio_bound(const RateMatrix& reference, const TargetRateFamily& target);

}  // namespace rateshift
