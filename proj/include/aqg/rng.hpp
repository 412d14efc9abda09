#pragma once

#include <cstdint>
#include <string_view>

namespace aqg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (run seed, purpose tag, counter). Every random
// stream in the project (init, shuffling, dropout) is derived this way, so a
// run is a pure function of its seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t counter = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) h = (h ^ c) * 1099511628211ULL;
  return splitmix64(seed ^ splitmix64(h ^ splitmix64(counter)));
}

}  // namespace aqg
