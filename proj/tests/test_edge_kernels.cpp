#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "edgereg/csv.hpp"
#include "edgereg/edge_kernels.hpp"
#include "edgereg/errors.hpp"
#include "edgereg/png_io.hpp"
#include "helpers.hpp"

using namespace edgereg;

namespace {

std::filesystem::path tmpdir(const char* leaf) {
    auto p = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::vector<uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("laplacian3d: stencil properties") {
    auto k = laplacian3d<double>();
    double sum = 0;
    for (auto v : k) sum += v;
    CHECK(sum == 0.0);
    CHECK(k.at(1, 1, 1) == -6.0);
    CHECK(k.at(0, 1, 1) == 1.0);
    CHECK(k.at(0, 0, 0) == 0.0);

    auto k26 = laplacian3d_26<double>();
    sum = 0;
    for (auto v : k26) sum += v;
    CHECK(sum == 0.0);
    CHECK(k26.at(1, 1, 1) == -26.0);
    CHECK(k26.at(0, 0, 0) == 1.0);
}

TEST_CASE("laplacian3d: constant and quadratic responses") {
    const int N = 8;
    auto w = Var<double>::constant(laplacian3d<double>().reshaped({1, 1, 3, 3, 3}));
    auto b = Var<double>::constant(Tensor<double>({1}));

    Tensor<double> cst = Tensor<double>::full({1, N, N, N}, 3.25);
    auto yc = conv3d(Var<double>::constant(cst), w, b);
    Tensor<double> quad({1, N, N, N});
    for (int z = 0; z < N; ++z)
        for (int y = 0; y < N; ++y)
            for (int x = 0; x < N; ++x) quad.at(0, z, y, x) = double(x) * double(x);
    auto yq = conv3d(Var<double>::constant(quad), w, b);

    for (int z = 1; z < N - 1; ++z)
        for (int y = 1; y < N - 1; ++y)
            for (int x = 1; x < N - 1; ++x) {
                CHECK(yc.val().at(0, z, y, x) == doctest::Approx(0.0).epsilon(1e-12));
                CHECK(yq.val().at(0, z, y, x) == doctest::Approx(2.0).epsilon(1e-12));
            }
}

TEST_CASE("init_edge_bank: structure of the perturbed init") {
    auto bank = init_edge_bank<double>("e", 2, 8, 42, 4);
    CHECK(bank.c_in() == 2);
    CHECK(bank.c_out() == 8);
    REQUIRE(bank.w.value.shape() == std::vector<int>({8, 2, 3, 3, 3}));

    // zero base positions stay exactly zero; nonzero positions perturbed off base
    const auto base = laplacian3d<double>();
    for (int co = 0; co < 8; ++co)
        for (int ci = 0; ci < 2; ++ci)
            for (int z = 0; z < 3; ++z)
                for (int y = 0; y < 3; ++y)
                    for (int x = 0; x < 3; ++x) {
                        const size_t off =
                            ((((size_t(co) * 2 + size_t(ci)) * 3 + size_t(z)) * 3 + size_t(y)) * 3 +
                             size_t(x));
                        const double v = bank.w.value[off];
                        if (base.at(z, y, x) == 0.0)
                            CHECK(v == 0.0);
                        else
                            CHECK(v != base.at(z, y, x) / 2.0);
                    }
    for (auto v : bank.b.value) CHECK(v == 0.0);

    // pairwise distinct filters
    const size_t fsz = 2 * 27;
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j) {
            double md = 0;
            for (size_t e = 0; e < fsz; ++e)
                md = std::max(md, std::abs(bank.w.value[size_t(i) * fsz + e] -
                                           bank.w.value[size_t(j) * fsz + e]));
            CHECK(md > 0.0);
        }
}

TEST_CASE("init_edge_bank: perturbation law, Monte Carlo") {
    // 10^4 center entries: h/(−6) = 1 + 0.1*eps, so mean ~ 1, std ~ 0.1
    auto bank = init_edge_bank<double>("e", 1, 10000, 7, 16);
    const size_t center = (size_t(1) * 3 + 1) * 3 + 1;
    double s = 0, s2 = 0;
    for (int k = 0; k < 10000; ++k) {
        const double r = bank.w.value[size_t(k) * 27 + center] / -6.0;
        s += r;
        s2 += r * r;
    }
    const double mean = s / 10000.0;
    const double var = s2 / 10000.0 - mean * mean;
    CHECK(std::abs(mean - 1.0) < 0.01);
    CHECK(std::abs(std::sqrt(var) - 0.1) < 0.01);
}

TEST_CASE("init_edge_bank: determinism and validation") {
    auto a = init_edge_bank<float>("e", 1, 8, 5, 4);
    auto b = init_edge_bank<float>("e", 1, 8, 5, 4);
    auto c = init_edge_bank<float>("e", 1, 8, 6, 4);
    bool same = true, diff = false;
    for (size_t i = 0; i < a.w.value.numel(); ++i) {
        same = same && a.w.value[i] == b.w.value[i];
        diff = diff || a.w.value[i] != c.w.value[i];
    }
    CHECK(same);
    CHECK(diff);

    CHECK_THROWS_AS(init_edge_bank<float>("e", 0, 8, 1, 4), argument_error);
    CHECK_THROWS_AS(init_edge_bank<float>("e", 1, 3, 1, 4), argument_error); // c_out < select_n
}

TEST_CASE("init_edge_bank: unperturbed bank is the pure Laplacian") {
    auto bank = init_edge_bank<double>("e", 1, 4, 3, 2, 0.0);
    const auto base = laplacian3d<double>();
    for (int k = 0; k < 4; ++k)
        for (int i = 0; i < 27; ++i) CHECK(bank.w.value[size_t(k) * 27 + size_t(i)] == base[size_t(i)]);

    // replicated c_in=2 bank responds to a duplicated-channel input exactly like
    // the single-channel bank
    auto bank2 = init_edge_bank<double>("e", 2, 4, 3, 2, 0.0);
    RNG rng(11);
    Tensor<double> v({1, 6, 6, 6});
    for (auto& e : v) e = rng.uniform();
    Tensor<double> v2({2, 6, 6, 6});
    for (int c = 0; c < 2; ++c)
        for (size_t i = 0; i < v.numel(); ++i) v2[size_t(c) * v.numel() + i] = v[i];

    auto y1 = conv3d(Var<double>::constant(v), use(bank.w), use(bank.b));
    auto y2 = conv3d(Var<double>::constant(v2), use(bank2.w), use(bank2.b));
    for (size_t i = 0; i < y1.val().numel(); ++i)
        CHECK(y1.val()[i] == doctest::Approx(y2.val()[i]).epsilon(1e-12));
}

TEST_CASE("edge_forward: forced ordering and ties") {
    // zero filters, biases (3,1,2): post-activation channels are constant
    EdgeKernelBank<double> bank;
    bank.base_kernel = laplacian3d<double>();
    bank.w.name = "e.w";
    bank.b.name = "e.b";
    bank.w.value = Tensor<double>({3, 1, 3, 3, 3});
    bank.b.value = Tensor<double>({3}, {3.0, 1.0, 2.0});
    bank.select_n = 2;

    Tensor<double> x({1, 4, 4, 4});
    std::vector<int> sel;
    auto y = edge_forward(bank, Var<double>::constant(x), &sel);
    CHECK(sel == std::vector<int>({0, 2}));
    REQUIRE(y.shape() == std::vector<int>({2, 4, 4, 4}));
    CHECK(y.val().at(0, 1, 1, 1) == 3.0);
    CHECK(y.val().at(1, 1, 1, 1) == 2.0);

    bank.b.value.fill(0.0); // all channels identical -> ascending tie-break
    edge_forward(bank, Var<double>::constant(x), &sel);
    CHECK(sel == std::vector<int>({0, 1}));
}

TEST_CASE("edge_forward: full-sort oracle and scale invariance") {
    auto bank = init_edge_bank<double>("e", 2, 12, 19, 5);
    RNG rng(3);
    Tensor<double> x({2, 5, 5, 5});
    for (auto& v : x) v = rng.normal();

    std::vector<int> sel;
    auto y = edge_forward(bank, Var<double>::constant(x), &sel);
    CHECK(y.shape() == std::vector<int>({5, 5, 5, 5})); // same spatial dims

    // brute-force oracle: full conv, LeakyReLU, channel means, full sort
    auto a = leaky_relu(conv3d(Var<double>::constant(x), use(bank.w), use(bank.b)),
                        bank.leaky_slope);
    std::vector<double> mean(12, 0.0);
    const size_t sp = 125;
    for (int c = 0; c < 12; ++c) {
        for (size_t i = 0; i < sp; ++i) mean[size_t(c)] += a.val()[size_t(c) * sp + i];
        mean[size_t(c)] /= double(sp);
    }
    std::vector<int> order(12);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (mean[size_t(i)] != mean[size_t(j)]) return mean[size_t(i)] > mean[size_t(j)];
        return i < j;
    });
    order.resize(5);
    CHECK(sel == order);

    // selected channel content matches the oracle rows
    for (int r = 0; r < 5; ++r)
        for (size_t i = 0; i < sp; ++i)
            CHECK(y.val()[size_t(r) * sp + i] == a.val()[size_t(order[size_t(r)]) * sp + i]);

    // positive scaling preserves the selected set and order
    Tensor<double> xs = x.clone();
    for (auto& v : xs) v *= 2.5;
    std::vector<int> sel2;
    edge_forward(bank, Var<double>::constant(xs), &sel2);
    CHECK(sel2 == sel);

    // channel mismatch
    Tensor<double> bad({3, 5, 5, 5});
    CHECK_THROWS_AS(edge_forward(bank, Var<double>::constant(bad)), shape_error);
}

TEST_CASE("edge_forward: gradients flow only through selected channels") {
    auto bank = init_edge_bank<double>("e", 1, 4, 23, 2);
    RNG rng(9);
    Tensor<double> x({1, 6, 6, 6});
    for (auto& v : x) v = rng.normal();

    std::vector<int> sel;
    auto loss = vsum(edge_forward(bank, Var<double>::constant(x), &sel));
    backward(loss);

    for (int k = 0; k < 4; ++k) {
        double gmax = 0;
        for (int i = 0; i < 27; ++i)
            gmax = std::max(gmax, std::abs(bank.w.grad[size_t(k) * 27 + size_t(i)]));
        const bool selected = std::find(sel.begin(), sel.end(), k) != sel.end();
        if (selected)
            CHECK(gmax > 0.0);
        else
            CHECK(gmax == 0.0);
        if (!selected) CHECK(bank.b.grad[size_t(k)] == 0.0);
    }
}

TEST_CASE("edge_forward: non-trainable bank receives no gradients") {
    auto bank = init_edge_bank<double>("e", 1, 4, 23, 2);
    bank.set_trainable(false);
    RNG rng(9);
    Tensor<double> x({1, 5, 5, 5});
    for (auto& v : x) v = rng.normal();
    auto loss = vsum(edge_forward(bank, Var<double>::constant(x)));
    backward(loss);
    CHECK(bank.w.grad.empty());
    CHECK(bank.b.grad.empty());
}

TEST_CASE("gradcheck: edge_forward wrt filters and bias") {
    auto bank = init_edge_bank<double>("e", 1, 4, 31, 2);
    RNG rng(17);
    Tensor<double> x({1, 6, 6, 6});
    for (auto& v : x) v = rng.normal();

    auto build = [&](bool) { return vsum(edge_forward(bank, Var<double>::constant(x))); };
    auto loss = build(true);
    backward(loss);

    Tensor<double> gw = bank.w.grad.clone();
    const double ew = testutil::gradcheck(build, bank.w.value, gw, 60, rng, 1e-5);
    CHECK(ew < 1e-4);

    bank.w.grad.fill(0.0);
    bank.b.grad.fill(0.0);
    auto loss2 = build(true);
    backward(loss2);
    Tensor<double> gb = bank.b.grad.clone();
    const double eb = testutil::gradcheck(build, bank.b.value, gb, 4, rng, 1e-5);
    CHECK(eb < 1e-4);
}

TEST_CASE("snapshots: epoch ordering and content") {
    auto bank = init_edge_bank<float>("e", 1, 4, 3, 2);
    std::vector<KernelSnapshot> series;
    append_snapshot(series, snapshot(bank, 0));
    bank.w.value[0] += 1.0f;
    append_snapshot(series, snapshot(bank, 10));
    CHECK(series.size() == 2);
    CHECK(series[0].filters[0] != series[1].filters[0]);
    CHECK(series[1].filters[0] == doctest::Approx(double(bank.w.value[0])));
    CHECK_THROWS_AS(append_snapshot(series, snapshot(bank, 10)), argument_error);
    CHECK_THROWS_AS(append_snapshot(series, snapshot(bank, 4)), argument_error);
}

TEST_CASE("export_heatmaps: files, scale convention, determinism") {
    KernelSnapshot snap;
    snap.epoch = 0;
    snap.filters = Tensor<double>({1, 1, 3, 3, 3});
    Tensor<double>& f = snap.filters;
    f[size_t((1 * 3 + 1) * 3 + 1)] = -2.0; // center
    f[size_t((0 * 3 + 1) * 3 + 1)] = 1.0;  // slice 0 center

    auto d1 = tmpdir("edgereg_hm1"), d2 = tmpdir("edgereg_hm2");
    export_heatmaps(snap, d1.string(), 4);
    export_heatmaps(snap, d2.string(), 4);

    for (int s = 0; s < 3; ++s) {
        char name[40];
        std::snprintf(name, sizeof name, "kernel000_slice%d.png", s);
        REQUIRE(std::filesystem::exists(d1 / name));
        CHECK(slurp(d1 / name) == slurp(d2 / name)); // byte-deterministic
    }

    int w = 0, h = 0;
    auto img0 = read_png_gray8((d1 / "kernel000_slice0.png").string(), w, h);
    REQUIRE(w == 12);
    REQUIRE(h == 12);
    // vmax = 2: value 1 -> 191, value 0 -> 128
    CHECK(img0[size_t(5) * 12 + 5] == 191); // center cell of slice 0
    CHECK(img0[0] == 128);
    auto img1 = read_png_gray8((d1 / "kernel000_slice1.png").string(), w, h);
    CHECK(img1[size_t(5) * 12 + 5] == 0); // value -2 -> black

    export_evolution_strip(snap, d1.string(), 2);
    REQUIRE(std::filesystem::exists(d1 / "evolution_epoch0000.png"));
    auto strip = read_png_gray8((d1 / "evolution_epoch0000.png").string(), w, h);
    CHECK(w == 6);  // one kernel, 3*2 wide
    CHECK(h == 18); // 3 slices of 3*2
}

TEST_CASE("pca_project: analytic two-axis family") {
    // kernel i = a_i * e0 + b_i * e1 with sum(a_i b_i) = 0, so the covariance is
    // diagonal and PC1 = e0, PC2 = e1 exactly; var(a) = 2.5, var(b) = 1
    const std::vector<double> a = {-2, -1, 0, 1, 2};
    const std::vector<double> b = {1, -1, 0, -1, 1};
    Tensor<double> filters({5, 1, 3, 3, 3});
    for (int k = 0; k < 5; ++k) {
        filters[size_t(k) * 27 + 0] = a[size_t(k)];
        filters[size_t(k) * 27 + 1] = b[size_t(k)];
    }
    auto r = pca_project(filters);
    REQUIRE(r.points.size() == 5);
    CHECK(r.ev1 == doctest::Approx(2.5 / 3.5).epsilon(1e-12));
    CHECK(r.ev2 == doctest::Approx(1.0 / 3.5).epsilon(1e-12));
    for (int k = 0; k < 5; ++k) {
        CHECK(r.points[size_t(k)].first == doctest::Approx(a[size_t(k)]).epsilon(1e-9));
        CHECK(r.points[size_t(k)].second == doctest::Approx(b[size_t(k)]).epsilon(1e-9));
    }
}

TEST_CASE("pca_project: degenerate families") {
    // identical kernels -> all projections at origin, ratios (0,0)
    Tensor<double> same({4, 1, 3, 3, 3});
    for (int k = 0; k < 4; ++k)
        for (int i = 0; i < 27; ++i) same[size_t(k) * 27 + size_t(i)] = double(i) * 0.25;
    auto r0 = pca_project(same);
    CHECK(r0.ev1 == 0.0);
    CHECK(r0.ev2 == 0.0);
    for (auto& p : r0.points) {
        CHECK(p.first == 0.0);
        CHECK(p.second == 0.0);
    }

    // rank-1 family: base + t*e1, t in {-1, 0, 1}
    Tensor<double> rank1({3, 1, 3, 3, 3});
    const auto base = laplacian3d<double>();
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 27; ++i) rank1[size_t(k) * 27 + size_t(i)] = base[size_t(i)];
    rank1[0 * 27 + 1] += -1.0;
    rank1[2 * 27 + 1] += 1.0;
    auto r1 = pca_project(rank1);
    CHECK(r1.ev1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r1.ev2 == doctest::Approx(0.0).epsilon(1e-10));
    for (auto& p : r1.points) CHECK(std::abs(p.second) < 1e-9);
    CHECK(r1.points[0].first == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(r1.points[1].first == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r1.points[2].first == doctest::Approx(1.0).epsilon(1e-9));

    Tensor<double> few({2, 1, 3, 3, 3});
    CHECK_THROWS_AS(pca_project(few), argument_error);
}

TEST_CASE("pca_project: ratio ordering and CSV output") {
    auto bank = init_edge_bank<double>("e", 1, 16, 77, 8);
    auto r = pca_project(snapshot(bank, 0));
    CHECK(r.ev1 >= r.ev2);
    CHECK(r.ev2 >= 0.0);
    CHECK(r.ev1 + r.ev2 <= 1.0 + 1e-12);

    auto dir = tmpdir("edgereg_pca");
    write_pca_csv(r, (dir / "pca1.csv").string());
    write_pca_csv(r, (dir / "pca2.csv").string());
    CHECK(slurp(dir / "pca1.csv") == slurp(dir / "pca2.csv"));

    auto rows = read_csv((dir / "pca1.csv").string());
    REQUIRE(rows.size() == 18); // header + 16 kernels + explained_variance
    CHECK(rows[0] == std::vector<std::string>{"kernel_id", "pc1", "pc2"});
    CHECK(rows[17][0] == "explained_variance");
}
