#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mrsgd/tensor.hpp"

namespace mrsgd {

namespace detail {
/// Raw Philox4x32-10 block function (Salmon et al. constants).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);
}  // namespace detail

/// Counter-based random stream (Philox4x32-10 keyed by seed and stream id).
///
/// Every draw is a pure function of (seed, stream_id, counter), so a stream
/// can be checkpointed as three integers and child streams never interfere
/// with each other regardless of the order in which they are consumed.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent stream derived from this one's identity (not its position).
  RngStream child(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t uniform_index(std::uint64_t bound);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// n Bernoulli(p) flags written as 0/1; consumes ceil(n / 4) counter
  /// values, one 32-bit word per flag with p quantized to 2^-32.
  void fill_bernoulli(std::uint8_t* out, std::size_t n, double p);

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  // Second Box-Muller variate is discarded so the stream state stays three integers.
};

/// n i.i.d. normal draws with the given mean and standard deviation.
Tensor gauss(RngStream& rng, std::size_t n, double mean, double std);

/// In-place Fisher-Yates shuffle.
void shuffle(std::vector<std::size_t>& items, RngStream& rng);

}  // namespace mrsgd
