#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedlab {

// Deterministic randomness for the whole library.
//
// Every consumer of randomness draws from its own stream, derived from the
// run seed plus a purpose tag and up to three integer coordinates
// (typically client id, round, epoch). Streams are therefore independent of
// execution order: adding or removing one consumer never perturbs another.
//
// The generator is std::mt19937_64 (output sequence pinned by the standard),
// but all distributions are implemented here on top of raw 64-bit draws, so
// results do not depend on the standard library's unspecified distribution
// algorithms. Determinism is guaranteed within this implementation, not
// bit-for-bit across languages.

namespace stream {
inline constexpr std::uint64_t kInit = 0x696e697400000001ULL;       // parameter init
inline constexpr std::uint64_t kData = 0x6461746100000002ULL;       // synthetic data
inline constexpr std::uint64_t kPartition = 0x7061727400000003ULL;  // partitioners
inline constexpr std::uint64_t kBatch = 0x6261746300000004ULL;      // mini-batch shuffles
inline constexpr std::uint64_t kSample = 0x73616d7000000005ULL;     // client sampling
inline constexpr std::uint64_t kGradCheck = 0x6763686b00000006ULL;  // coordinate sampling
inline constexpr std::uint64_t kToy = 0x746f790000000007ULL;        // toy landscape
}  // namespace stream

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a stream seed from (seed, purpose, a, b, c).
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t purpose,
                                   std::uint64_t a = 0, std::uint64_t b = 0,
                                   std::uint64_t c = 0) {
  std::uint64_t s = seed;
  for (std::uint64_t word : {purpose, a, b, c}) {
    s ^= splitmix64(s) ^ (word * 0x9e3779b97f4a7c15ULL);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t stream_seed) : engine_(stream_seed) {}

  static Rng from(std::uint64_t seed, std::uint64_t purpose, std::uint64_t a = 0,
                  std::uint64_t b = 0, std::uint64_t c = 0) {
    return Rng(derive_stream(seed, purpose, a, b, c));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1); never returns an exact 0 (safe for logs).
  double uniform01_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform01_open();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  // Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform01_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet(alpha * 1_n) proportions.
  std::vector<double> dirichlet(double alpha, std::size_t n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
      v = gamma(alpha);
      sum += v;
    }
    if (sum <= 0.0) {
      // All draws underflowed (pathologically small alpha): put all mass on
      // one seeded component.
      std::fill(p.begin(), p.end(), 0.0);
      p[uniform_int(n)] = 1.0;
      return p;
    }
    for (auto& v : p) v /= sum;
    return p;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // First k elements of a uniform permutation of [0, n); ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k < n ? k : n);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace fedlab
