#include "mrsgd/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

}  // namespace

std::array<std::uint32_t, 4> detail::philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RngStream RngStream::child(std::uint64_t tag) const {
  return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(tag + 0x632BE59BD9B4E019ULL)), 0);
}

std::uint64_t RngStream::next_u64() {
  // Key: seed. Counter words: draw index and stream id.
  const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                                         static_cast<std::uint32_t>(stream_id_),
                                         static_cast<std::uint32_t>(stream_id_ >> 32)};
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
  ++counter_;
  const auto out = detail::philox4x32_10(ctr, key);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void RngStream::fill_bernoulli(std::uint8_t* out, std::size_t n, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("fill_bernoulli: probability outside [0, 1]");
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
  const auto s0 = static_cast<std::uint32_t>(stream_id_);
  const auto s1 = static_cast<std::uint32_t>(stream_id_ >> 32);
  for (std::size_t i = 0; i < n; i += 4) {
    const auto words = detail::philox4x32_10(
        {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), s0, s1}, key);
    ++counter_;
    const std::size_t m = std::min<std::size_t>(4, n - i);
    for (std::size_t j = 0; j < m; ++j) out[i + j] = words[j] < threshold ? 1 : 0;
  }
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::uniform_index(std::uint64_t bound) {
  if (bound == 0) throw DomainError("uniform_index: empty range");
  // Rejection on the top of the range keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

double RngStream::normal() {
  double u1 = uniform();
  while (u1 == 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor gauss(RngStream& rng, std::size_t n, double mean, double std) {
  if (!(std >= 0.0)) throw DomainError("gauss: standard deviation must be nonnegative");
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = mean + std * rng.normal();
  return out;
}

void shuffle(std::vector<std::size_t>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace mrsgd
