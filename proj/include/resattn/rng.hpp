#pragma once

#include <cstddef>
#include <cstdint>

#include "resattn/core_math.hpp"

namespace resattn {

// splitmix64 stream with Box-Muller normals. Identical output on every platform.
class Rng {
public:
    explicit Rng(Seed seed) : state_(seed.value) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    Vector normal_vector(std::size_t dim, double scale = 1.0);
    Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale = 1.0);

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent child seed, e.g. one per training step.
Seed derive_seed(Seed base, std::uint64_t stream);

}  // namespace resattn
