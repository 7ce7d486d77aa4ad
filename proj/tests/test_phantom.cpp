#include "doctest.h"

#include <cmath>
#include <set>

#include "edgereg/phantom.hpp"
#include "helpers.hpp"

using namespace edgereg;
using namespace testutil;

TEST_CASE("phantom generation is deterministic") {
    auto a = generate_phantom_pair(3, 24, 24, 24, 3.0, 1.5, true);
    auto b = generate_phantom_pair(3, 24, 24, 24, 3.0, 1.5, true);
    for (size_t i = 0; i < a.fixed.data.numel(); ++i) {
        REQUIRE(a.fixed.data[i] == b.fixed.data[i]);
        REQUIRE(a.moving.data[i] == b.moving.data[i]);
        REQUIRE(a.fixed_labels.data[i] == b.fixed_labels.data[i]);
    }
    for (size_t i = 0; i < a.gt_disp.data.numel(); ++i)
        REQUIRE(a.gt_disp.data[i] == b.gt_disp.data[i]);
    for (int i = 0; i < 12; ++i) REQUIRE(a.gt_affine.params[i] == b.gt_affine.params[i]);

    auto c = generate_phantom_pair(4, 24, 24, 24, 3.0, 1.5, true);
    bool differs = false;
    for (size_t i = 0; i < a.moving.data.numel() && !differs; ++i)
        differs = a.moving.data[i] != c.moving.data[i];
    CHECK(differs);
}

TEST_CASE("zero magnitudes give identical volumes; labels stay in {0..3}") {
    auto p = generate_phantom_pair(11, 20, 18, 16, 0.0, 0.0, false);
    for (size_t i = 0; i < p.fixed.data.numel(); ++i)
        REQUIRE(p.moving.data[i] == p.fixed.data[i]);
    for (int i = 0; i < 12; ++i) CHECK(p.gt_affine.params[i] == 0.0);
    for (auto v : p.gt_disp.data) CHECK(v == 0.f);
    CHECK(p.modality_remap == "none");

    std::set<int> seen;
    for (auto l : p.fixed_labels.data) seen.insert(l);
    CHECK(seen.count(0) == 1);
    CHECK(seen.count(1) == 1);
    CHECK(seen.count(2) == 1);
    CHECK(seen.count(3) == 1);
    for (auto l : p.fixed_labels.data) CHECK(l <= 3);

    for (auto v : p.fixed.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("modality shift remaps intensities but not labels") {
    auto p = generate_phantom_pair(5, 16, 16, 16, 0.0, 0.0, true);
    CHECK(p.modality_remap != "none");
    for (size_t i = 0; i < p.fixed.data.numel(); ++i) {
        const double expect = 1.0 - std::pow(double(p.fixed.data[i]), 0.7);
        CHECK(p.moving.data[i] == doctest::Approx(expect).epsilon(1e-5));
        REQUIRE(p.moving_labels.data[i] == p.fixed_labels.data[i]);
    }
    CHECK(label_dice(p.moving_labels, p.fixed_labels, 2) == 1.0);
    CHECK(label_dice(p.moving_labels, p.fixed_labels, 3) == 1.0);
}

TEST_CASE("rigid ground truth aligns labels to Dice >= 0.98") {
    // spec'd instance: seed 7, 32 cube, affine magnitude 4
    auto p = generate_phantom_pair(7, 32, 32, 32, 4.0, 0.0, false);
    auto back = warp_labels(p.moving_labels, p.gt_affine);
    CHECK(label_dice(back, p.fixed_labels, 1) >= 0.98);
    CHECK(label_dice(back, p.fixed_labels, 2) >= 0.98);
    CHECK(label_dice(back, p.fixed_labels, 3) >= 0.98);

    for (uint64_t seed : {1, 2, 3}) {
        auto q = generate_phantom_pair(seed, 32, 32, 32, 4.0, 0.0, false);
        auto b2 = warp_labels(q.moving_labels, q.gt_affine);
        CHECK(label_dice(b2, q.fixed_labels, 1) >= 0.98);
    }
}

TEST_CASE("affine plus displacement ground truth composes to Dice >= 0.98") {
    auto p = generate_phantom_pair(9, 32, 32, 32, 3.0, 2.0, false);
    // total ground-truth displacement: affine applied after the free-form part
    auto gt_total = compose_fields(affine_to_field(p.gt_affine, 32, 32, 32), p.gt_disp);
    auto back = warp_labels(p.moving_labels, gt_total);
    CHECK(label_dice(back, p.fixed_labels, 1) >= 0.98);
    CHECK(label_dice(back, p.fixed_labels, 2) >= 0.98);
    CHECK(label_dice(back, p.fixed_labels, 3) >= 0.98);
}

TEST_CASE("displacement field honours the requested maximum magnitude") {
    auto p = generate_phantom_pair(13, 24, 24, 24, 0.0, 2.0, false);
    const size_t n = 24 * 24 * 24;
    double mx = 0;
    for (size_t i = 0; i < n; ++i) {
        const double m2 = double(p.gt_disp.data[i]) * p.gt_disp.data[i] +
                          double(p.gt_disp.data[n + i]) * p.gt_disp.data[n + i] +
                          double(p.gt_disp.data[2 * n + i]) * p.gt_disp.data[2 * n + i];
        mx = std::max(mx, m2);
    }
    CHECK(std::sqrt(mx) == doctest::Approx(2.0).epsilon(1e-4));

    // smoothness of the sampled field: neighbour increments stay small
    double worst_step = 0;
    for (int z = 0; z < 24; ++z)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x + 1 < 24; ++x)
                worst_step = std::max(worst_step,
                                      double(std::abs(p.gt_disp.data.at(0, z, y, x + 1) -
                                                      p.gt_disp.data.at(0, z, y, x))));
    CHECK(worst_step < 0.5);
}

TEST_CASE("dims below 16 are rejected") {
    CHECK_THROWS_AS(generate_phantom_pair(1, 15, 16, 16, 0, 0, false), argument_error);
    CHECK_THROWS_AS(generate_phantom_pair(1, 16, 16, 8, 0, 0, false), argument_error);
}
