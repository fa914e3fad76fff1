#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace flowcp::num {

/// Deterministic random stream: xoshiro256++ state seeded through splitmix64.
///
/// The generator is pinned to this exact algorithm (not std:: distributions,
/// whose output is implementation-defined) so that a (seed, call sequence)
/// pair produces bit-identical output on every platform. Gaussian draws use
/// the Box-Muller transform and consume exactly two 64-bit words each.
///
/// Independent substreams are derived with `substream(tag)`: the child seed
/// is the splitmix64 finalizer applied to `seed + GOLDEN * (tag + 1)`.
/// Modules own fixed tags (see rng_tags below) so they never perturb each
/// other's streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller; consumes two words per call.
  double normal();
  double normal(double mean, double stddev);

  /// Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
  std::uint64_t uniform_below(std::uint64_t bound);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  /// First k entries of a Fisher-Yates shuffle: k distinct indices in [0, n).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  /// Independent child stream; deterministic in (seed, tag).
  RngStream substream(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draw_count() const { return counter_; }

  /// splitmix64 finalizer of seed + GOLDEN * (tag + 1); the substream map.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

/// Fixed substream tags. Values are part of the determinism contract:
/// changing them changes every downstream sample.
namespace rng_tags {
inline constexpr std::uint64_t kData = 1;         // scenario generation, splits
inline constexpr std::uint64_t kFlowInit = 2;     // flow weight init
inline constexpr std::uint64_t kQuantile = 3;     // quantile model training
inline constexpr std::uint64_t kServer = 4;       // round participation
inline constexpr std::uint64_t kClientBase = 5;   // + client id => client stream
inline constexpr std::uint64_t kConditioner = 6;  // conditioner draws (within client)
inline constexpr std::uint64_t kBatching = 7;     // minibatch sampling (within client)
inline constexpr std::uint64_t kQuantilePooled = 8;  // pooled-baseline quantile training
inline constexpr std::uint64_t kRefCalib = 9;        // reference-samples calibration draws
inline constexpr std::uint64_t kTrialBase = 1000; // + trial index => trial stream
}  // namespace rng_tags

}  // namespace flowcp::num
