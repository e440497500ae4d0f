#pragma once

#include <cstdint>
#include <span>

namespace rateshift {

/// Counter-based random stream. The triple (seed, stream_id, draws) fully
/// determines the next variate, so a stream can be replayed or forked without
/// touching any shared state. Output is SplitMix64 over a per-stream key.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t draws() const noexcept { return draws_; }

  std::uint64_t next_u64() noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double exponential(double rate) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Index drawn with probability weights[k] / sum(weights). Zero-weight entries
  /// are never returned.
  std::size_t categorical(std::span<const double> weights) noexcept;

  /// Independent child stream identified by `key` under the same seed.
  RngStream fork(std::uint64_t key) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t draws_ = 0;
};

/// Mix several identifiers into one stream id (order-sensitive).
std::uint64_t stream_key(std::uint64_t a, std::uint64_t b) noexcept;
std::uint64_t stream_key(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept;

}  // namespace rateshift
