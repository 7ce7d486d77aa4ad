#include "doctest.h"

#include <cmath>

#include "edgereg/rng.hpp"

using namespace edgereg;

TEST_CASE("rng streams are deterministic per seed") {
    RNG a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform stays in range and fills it") {
    RNG r(1);
    double lo = 1, hi = 0;
    for (int i = 0; i < 10000; ++i) {
        const double v = r.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
    const double x = r.uniform(-3, 5);
    CHECK(x >= -3);
    CHECK(x < 5);
}

TEST_CASE("normal moments roughly standard") {
    RNG r(7);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("mix derives distinct reproducible streams") {
    CHECK(RNG::mix(5, 0) == RNG::mix(5, 0));
    CHECK(RNG::mix(5, 0) != RNG::mix(5, 1));
    CHECK(RNG::mix(5, 0) != RNG::mix(6, 0));
    RNG a(RNG::mix(5, 0)), b(RNG::mix(5, 1));
    CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("below produces indices in range") {
    RNG r(9);
    for (int i = 0; i < 1000; ++i) CHECK(r.below(17) < 17);
}
