#pragma once

#include <cmath>
#include <cstdint>

#include "gpode/types.hpp"

namespace gpode {

/// Seeded generator with a platform-independent normal sampler.
/// std::normal_distribution is implementation-defined, so draws go through
/// an explicit Box-Muller transform on splitmix64 output instead.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Independent stream for worker `index`; used to fork per-restart
    /// generators so thread scheduling cannot perturb results.
    Rng fork(std::uint64_t index) const {
        Rng child(state_ ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
        child.next_u64();
        return child;
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Vector normal_vector(Eigen::Index n) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        // row-major fill so the draw order matches reading order
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace gpode
