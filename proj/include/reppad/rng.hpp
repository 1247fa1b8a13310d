#pragma once
#include <cstdint>
#include <string_view>
#include <vector>

namespace reppad {

// Deterministic splittable RNG. Every consumer derives a named stream from the master
// seed, so draw order is independent of processing order (users can be padded in any
// order and still see the same numbers). splitmix64 core; bounded draws use the
// multiply-shift mapping and consume exactly one 64-bit value, because the standard
// distributions are implementation-defined and would break bit-exact fixtures.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). One draw.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Uniform integer in [lo, hi], both ends inclusive. One draw.
  int64_t randint(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  template <class It>
  void shuffle(It first, It last) {
    for (auto i = static_cast<size_t>(last - first); i > 1; --i) {
      size_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    shuffle(v.begin(), v.end());
  }

 private:
  uint64_t state_;
};

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

// Named stream (master, tag, a, b) -> independent Rng. Same inputs -> same stream.
inline Rng derive_stream(uint64_t master, std::string_view tag, uint64_t a = 0,
                         uint64_t b = 0) {
  uint64_t h = detail::mix64(master ^ detail::hash_tag(tag));
  h = detail::mix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
  h = detail::mix64(h ^ (b + 0x7f4a7c159e3779b9ULL));
  return Rng(h);
}

}  // namespace reppad
