#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace conlab {

/// Philox-4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Mixes two 64-bit words into a new seed (SplitMix64 finalizer over a
/// golden-ratio combination). Used to derive per-purpose seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/*!
 * Counter-based generator.
 *
 * The key is the 64-bit seed; the 128-bit Philox counter is
 * (stream_id, block_index). Each block yields two 64-bit outputs, so any
 * (seed, stream_id, position) maps to the same bits on every platform and
 * independently of how many other streams exist or in what order they run.
 *
 * Normal variates use Box-Muller on pairs of 64-bit outputs:
 *   u1 = (a >> 11 + 1) * 2^-53  in (0, 1]
 *   u2 = (b >> 11) * 2^-53      in [0, 1)
 *   z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
 * z0 is returned first and z1 is cached for the next call.
 */
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  /// Number of normal variates handed out so far.
  std::uint64_t normals_drawn() const { return normals_drawn_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
  std::uint64_t normals_drawn_ = 0;
};

/// Independent substream `stream_id` of `seed`.
inline CounterRng rng_substream(std::uint64_t seed, std::uint64_t stream_id) {
  return CounterRng(seed, stream_id);
}

}  // namespace conlab
