#pragma once

#include <cstdint>
#include <random>

namespace bmc {

/// Deterministic random stream. All samplers below are implemented in-repo so
/// that a seed reproduces draws bitwise independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double normal();

  std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Independent stream for item `index` of a job seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);
inline Rng stream(std::uint64_t seed, std::uint64_t index) { return Rng(derive_seed(seed, index)); }

/// Gamma(shape, scale) by Marsaglia-Tsang; shape < 1 handled by the power boost.
double gamma_variate(Rng& rng, double shape, double scale);

/// Poisson(lambda): sequential inversion below 10, transformed rejection (PTRS) above.
std::int64_t poisson_variate(Rng& rng, double lambda);

}  // namespace bmc
