#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

namespace packetclip {

// 64-bit FNV-1a. Used for content digests, manifest hashes and seed derivation.
inline uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Deterministic seed derivation: combine a base seed with a stream tag.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t buf[2] = {a, b};
  return fnv1a64(buf, sizeof(buf));
}

inline uint64_t mix_seed(uint64_t a, const std::string& tag) {
  return mix_seed(a, fnv1a64(tag));
}

// mt19937_64 has a standard-mandated sequence; the distributions below are
// hand-rolled because the stdlib ones are implementation-defined, and the
// toolkit promises bitwise reproducibility per seed.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  // in [0, 1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // in [0, n)
  uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Box-Muller; spare value cached so draws stay paired.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), order randomized.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    if (k > n) k = n;
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    // partial Fisher-Yates
    for (size_t i = 0; i < k; ++i) {
      size_t j = i + uniform_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace packetclip
