#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "edgereg/rng.hpp"
#include "edgereg/volume.hpp"
#include "helpers.hpp"

using namespace edgereg;
using namespace testutil;

namespace {

std::string tmp_path(const std::string& name) { return "/tmp/edgereg_test_" + name; }

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Volume3D ramp_volume(int n) {
    Volume3D v;
    v.data = Tensor<float>({n, n, n});
    for (size_t i = 0; i < v.data.numel(); ++i) v.data[i] = float(i) / float(v.data.numel());
    v.spacing = {1.f, 1.25f, 0.5f};
    return v;
}

} // namespace

TEST_CASE("volume round-trips bit-exactly") {
    const auto path = tmp_path("roundtrip.vol3");
    Volume3D v = ramp_volume(8);
    write_volume(path, v);
    Volume3D r = read_volume(path);
    REQUIRE(r.data.same_shape(v.data));
    CHECK(r.spacing[1] == 1.25f);
    for (size_t i = 0; i < v.data.numel(); ++i) REQUIRE(r.data[i] == v.data[i]);
    std::remove(path.c_str());
}

TEST_CASE("random 16-cube round-trip preserves payload bytes") {
    RNG rng(5);
    Volume3D v;
    v.data = Tensor<float>({16, 16, 16});
    for (auto& x : v.data) x = float(rng.uniform());
    const auto p1 = tmp_path("bytes1.vol3"), p2 = tmp_path("bytes2.vol3");
    write_volume(p1, v);
    write_volume(p2, read_volume(p1));
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("writes are deterministic and sized per the format") {
    const auto p1 = tmp_path("det1.vol3"), p2 = tmp_path("det2.vol3");
    Volume3D v;
    v.data = Tensor<float>({8, 8, 8});
    write_volume(p1, v);
    write_volume(p2, v);
    const auto b1 = slurp(p1), b2 = slurp(p2);
    CHECK(b1 == b2);
    CHECK(b1.size() == 2088); // 40-byte header + 8*8*8*4
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("bad magic, truncation, version and dtype are rejected") {
    const auto path = tmp_path("bad.vol3");
    Volume3D v = ramp_volume(8);
    write_volume(path, v);

    auto bytes = slurp(path);
    SUBCASE("bad magic") {
        bytes[0] = 'X'; bytes[1] = 'X'; bytes[2] = 'X'; bytes[3] = 'X';
        std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(read_volume(path), format_error);
    }
    SUBCASE("truncated payload") {
        std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size() - 7));
        CHECK_THROWS_AS(read_volume(path), format_error);
    }
    SUBCASE("trailing bytes") {
        bytes.push_back(0);
        std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(read_volume(path), format_error);
    }
    SUBCASE("wrong version") {
        bytes[4] = 9;
        std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(read_volume(path), format_error);
    }
    SUBCASE("unknown dtype") {
        bytes[32] = 7;
        std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
        CHECK_THROWS_AS(read_volume(path), format_error);
    }
    SUBCASE("labels reader rejects float payload") {
        CHECK_THROWS_AS(read_labels(path), format_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("non-finite and out-of-range intensities are rejected") {
    const auto path = tmp_path("nan.vol3");
    Volume3D v = ramp_volume(8);
    v.data[10] = std::nanf("");
    CHECK_THROWS_AS(write_volume(path, v), data_error);
    v.data[10] = 1.5f;
    CHECK_THROWS_AS(write_volume(path, v), data_error);

    // a conforming header with an out-of-range payload still fails on read
    v.data[10] = 0.5f;
    write_volume(path, v);
    auto bytes = slurp(path);
    const float big = 2.f;
    std::memcpy(bytes.data() + 40, &big, 4);
    std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    CHECK_THROWS_AS(read_volume(path), data_error);
    Volume3D n = read_volume_normalized(path); // rescales instead
    CHECK(n.data[0] == 1.0f);
    std::remove(path.c_str());
}

TEST_CASE("labels and fields round-trip") {
    const auto lp = tmp_path("lab.vol3"), fp = tmp_path("field.vol3");
    LabelVolume l;
    l.data = Tensor<uint8_t>({8, 8, 8});
    for (size_t i = 0; i < l.data.numel(); ++i) l.data[i] = uint8_t(i % 4);
    write_labels(lp, l);
    LabelVolume lr = read_labels(lp);
    for (size_t i = 0; i < l.data.numel(); ++i) REQUIRE(lr.data[i] == l.data[i]);

    RNG rng(13);
    DisplacementField f = DisplacementField::zeros(8, 8, 8);
    for (auto& x : f.data) x = float(rng.uniform(-3, 3));
    write_field(fp, f);
    DisplacementField fr = read_field(fp);
    for (size_t i = 0; i < f.data.numel(); ++i) REQUIRE(fr.data[i] == f.data[i]);
    CHECK(fr.data.dim(0) == 3);

    // volume reader refuses the 3-channel file
    CHECK_THROWS_AS(read_volume(fp), format_error);
    std::remove(lp.c_str());
    std::remove(fp.c_str());
}
