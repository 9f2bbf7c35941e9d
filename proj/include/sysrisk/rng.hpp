#pragma once

// Counter-based random numbers.
//
// Every draw is a pure function of (seed, tag, path, index, step), so streams can be
// generated in any order or on any number of threads and still come out bit-identical.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sysrisk::rng {

/// Stream families. Each family addresses a disjoint part of the counter space.
enum class Stream : std::uint32_t {
  brownian = 0,   // index 0 = common noise W0, index i = idiosyncratic W^i
  initial = 1,    // initial reserve / target draws, per (path, bank)
  bank_type = 2,  // type draws, per bank only
  auxiliary = 3,  // randomized-policy uniforms, per path
  direction = 4,  // sliced-Wasserstein projection directions
  perturbation = 5,
};

/// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
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

/// Address of one draw in the counter space.
struct Counter {
  std::uint64_t seed = 0;
  Stream stream = Stream::brownian;
  std::uint64_t path = 0;
  std::uint64_t index = 0;
  std::uint64_t step = 0;
};

namespace detail {

inline std::array<std::uint32_t, 4> block(const Counter& c, std::uint32_t lane) {
  // 24 bits of index, 8 bits of stream/lane, 32 bits of step and path each; the seed
  // occupies the whole 64-bit key.
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(c.step), static_cast<std::uint32_t>(c.path),
      static_cast<std::uint32_t>(c.index),
      (static_cast<std::uint32_t>(c.stream) << 24) | (lane & 0xFFFFFFu)};
  // High bits of path/index/step are folded into the key so that very large indices
  // still address distinct blocks.
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(c.seed) ^ static_cast<std::uint32_t>(c.path >> 32),
      static_cast<std::uint32_t>(c.seed >> 32) ^ static_cast<std::uint32_t>(c.index >> 32) ^
          static_cast<std::uint32_t>(c.step >> 32) * 0x85EBCA6Bu};
  return philox4x32(ctr, key);
}

// 53-bit uniform in the open interval (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ull << 53) - 1)) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Uniform on (0, 1). `lane` selects one of several independent draws at the same address.
inline double uniform(const Counter& c, std::uint32_t lane = 0) {
  const auto b = detail::block(c, lane);
  return detail::to_open_unit(b[0], b[1]);
}

/// Standard normal by Box-Muller on one Philox block.
inline double normal(const Counter& c, std::uint32_t lane = 0) {
  const auto b = detail::block(c, lane);
  const double u1 = detail::to_open_unit(b[0], b[1]);
  const double u2 = detail::to_open_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sysrisk::rng
