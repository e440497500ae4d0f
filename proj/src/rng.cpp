#include "rateshift/rng.hpp"

#include <cmath>

namespace rateshift {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), key_(mix64(seed ^ mix64(stream_id + kGolden))) {}

std::uint64_t RngStream::next_u64() noexcept {
  ++draws_;
  return mix64(key_ + draws_ * kGolden);
}

double RngStream::uniform() noexcept {
  // 53 random bits, shifted half an ulp so neither endpoint is reachable
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

std::size_t RngStream::categorical(std::span<const double> weights) noexcept {
  double total = 0.0;
  for (double w : weights) total += w;
  const double target = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    last_positive = k;
    acc += weights[k];
    if (target < acc) return k;
  }
  return last_positive;
}

RngStream RngStream::fork(std::uint64_t key) const noexcept {
  return RngStream(seed_, stream_key(stream_id_, key));
}

std::uint64_t stream_key(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(mix64(a + kGolden) ^ (b * 0xd1b54a32d192ed03ULL + 1));
}

std::uint64_t stream_key(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
  return stream_key(stream_key(a, b), c);
}

}  // namespace rateshift
