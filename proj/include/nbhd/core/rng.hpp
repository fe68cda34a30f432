#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace nbhd {

// FNV-1a over bytes. Stable across platforms and runs; used for seed fan-out,
// config hashes and weight fingerprints.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent child seed from a parent seed and a label, e.g.
// derive_seed(global, "grid_sample:060855001001").
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

// Thin wrapper over mt19937_64 with distribution code written out so the
// stream of values does not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::int64_t range(std::int64_t lo, std::int64_t hi_inclusive);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nbhd
