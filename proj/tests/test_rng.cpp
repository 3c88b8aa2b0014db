#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "resattn/rng.hpp"

using namespace resattn;

TEST_CASE("same seed, same stream") {
    Rng a(Seed{42});
    Rng b(Seed{42});
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(Seed{43});
    CHECK(Rng(Seed{42}).next_u64() != c.next_u64());
}

TEST_CASE("derived seeds differ per stream and are stable") {
    CHECK(derive_seed(Seed{1}, 0).value != derive_seed(Seed{1}, 1).value);
    CHECK(derive_seed(Seed{1}, 5).value == derive_seed(Seed{1}, 5).value);
    CHECK(derive_seed(Seed{1}, 5).value != derive_seed(Seed{2}, 5).value);
}

TEST_CASE("uniform and normal moments") {
    Rng rng(Seed{7});
    constexpr int n = 200000;
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    // 5 sigma bands.
    CHECK(std::abs(su / n - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
    CHECK(std::abs(sn / n) < 5.0 / std::sqrt(double(n)));
    CHECK(std::abs(sn2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("below covers its range evenly") {
    Rng rng(Seed{11});
    std::vector<int> counts(6, 0);
    constexpr int n = 60000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(6)];
    for (int c : counts) CHECK(std::abs(c - n / 6) < 5.0 * std::sqrt(n * (1.0 / 6) * (5.0 / 6)));
    CHECK(rng.below(1) == 0);
}
