#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace mccot {

/// Counter-based random stream (Philox4x32-10).
///
/// A stream is fully determined by (seed, stream_id); the counter advances by one
/// block of four 32-bit words. Output depends only on integer arithmetic, so a
/// given (seed, stream_id) yields the same bits on every platform. Gaussian
/// draws go through libm (log/cos) and are reproducible on any IEEE-754 libm
/// that rounds those functions the same way.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (no cached second value).
  double normal() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int cursor_ = 4;
};

/// Mixes a list of integers into one stream id (splitmix64 chaining).
std::uint64_t derive_stream(std::initializer_list<std::uint64_t> parts) noexcept;

}  // namespace mccot
