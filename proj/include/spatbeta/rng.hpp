#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace spatbeta {

// Seeded random source. Only the engine comes from <random>; the variate
// transforms are written out here so draws are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  // Marsaglia-Tsang; shape > 0, unit scale.
  double gamma(double shape);
  double beta(double a, double b);

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[index(i)]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives a child seed from a parent seed and a stream label, so that
// independent tasks get decorrelated, order-independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace spatbeta
