#pragma once

#include <array>
#include <cstdint>

namespace fewshot {

/// Counter-based random stream built on Philox4x32-10.
///
/// A stream is fully determined by (key, counter). Streams are cheap to
/// fork: split(lane) derives an independent child key by folding the lane
/// index through the block function, so every episode / worker can own its
/// own deterministic stream regardless of scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_{seed} {}

  /// Independent child stream for the given lane index.
  Rng split(std::uint64_t lane) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double next_double();

  /// Unbiased uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  /// Standard normal via Box-Muller (second value cached).
  double next_gaussian();

  std::uint64_t key() const { return key_; }

  /// One block of the underlying bijection; exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox4x32_10(
      std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;  // 4 = exhausted
  double gauss_spare_ = 0.0;
  bool has_gauss_spare_ = false;

  void refill();
};

}  // namespace fewshot
