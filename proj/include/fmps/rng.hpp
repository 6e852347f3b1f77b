#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fmps/tensor.hpp"

namespace fmps {

// Deterministic random source. Normal draws go through an explicit
// Box-Muller transform so a seed pins the exact stream independent of the
// standard library's distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(engine_() % n);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * kPi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    Tensor normal_tensor(std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
        return t;
    }

    // Derives an independent stream, e.g. one per sampling chain.
    static std::uint64_t substream(std::uint64_t seed, std::uint64_t index) {
        // splitmix64 over (seed + index) so adjacent chain ids decorrelate.
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

  private:
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fmps
