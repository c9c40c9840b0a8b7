#pragma once

#include <cstdint>
#include <random>

namespace ratelab {

/// splitmix64 step; the standard finalizer, good enough to decorrelate
/// cell streams derived from (seed, n, replicate).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic stream id for one experiment cell.
inline std::uint64_t cell_stream(std::uint64_t seed, std::uint64_t n, std::uint64_t replicate) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s ^= n * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(s);
  s ^= replicate + 0x632be59bd9b4e019ULL;
  std::uint64_t c = splitmix64(s);
  return a ^ (b + 0x9e3779b97f4a7c15ULL + (c << 6) + (c >> 2));
}

/// mt19937_64 seeded through splitmix so that nearby stream ids do not
/// produce correlated engines.
inline std::mt19937_64 make_engine(std::uint64_t stream) {
  std::uint64_t s = stream;
  std::seed_seq seq{splitmix64(s), splitmix64(s), splitmix64(s), splitmix64(s)};
  return std::mt19937_64(seq);
}

inline std::mt19937_64 make_cell_engine(std::uint64_t seed, std::uint64_t n,
                                        std::uint64_t replicate) {
  return make_engine(cell_stream(seed, n, replicate));
}

}  // namespace ratelab
