#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fedmobi {

// FNV-1a over raw bytes. Used for content digests and checksums.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// Derive a labeled sub-seed from a root seed. Every random decision in a run
// draws from a stream named here, so components cannot silently share state.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

// Deterministic generator (xoshiro256**, splitmix64-seeded). Distributions
// are implemented here rather than with std::*_distribution so that a given
// seed produces the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), modulo-rejection, n > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal (Box-Muller, second draw cached).
  double normal();
  double normal(double mean, double stddev);
  // Gamma(alpha, 1), alpha > 0 (Marsaglia-Tsang, boosted for alpha < 1).
  double gamma(double alpha);
  // Dirichlet over the given concentration vector.
  std::vector<double> dirichlet(const std::vector<double>& alpha);

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace fedmobi
