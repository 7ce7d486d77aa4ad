#include <cmath>
#include <vector>

#include "doctest.h"
#include "edgereg/conv_blocks.hpp"
#include "edgereg/errors.hpp"
#include "helpers.hpp"

using namespace edgereg;

namespace {

BlockConfig cfg_of(int cin, int cout, double p = 0.0) {
    BlockConfig c;
    c.in_channels = cin;
    c.out_channels = cout;
    c.dropout_p = p;
    return c;
}

template <class Block>
Tensor<double> run_eval(Block& b, const Tensor<double>& x) {
    return b.forward(Var<double>::constant(x), TrainContext::eval()).val();
}

} // namespace

TEST_CASE("block config validation") {
    BlockConfig c = cfg_of(2, 4);
    CHECK_NOTHROW(c.validate());
    c.dilation_rates = {6, 6, 18};
    CHECK_THROWS_AS(c.validate(), argument_error);
    c.dilation_rates = {0, 2};
    CHECK_THROWS_AS(c.validate(), argument_error);
    c = cfg_of(2, 4);
    c.dropout_p = 1.0;
    CHECK_THROWS_AS(c.validate(), argument_error);
    c = cfg_of(0, 4);
    CHECK_THROWS_AS(c.validate(), argument_error);
    c = cfg_of(2, 4);
    c.dense_growth = 0;
    CHECK_THROWS_AS(c.validate(), argument_error);
}

TEST_CASE("residual_block: pure skip with zero main path") {
    RNG rng(1);
    ResidualBlock<double> blk("r", cfg_of(2, 2), rng);
    blk.conv1.w.value.fill(0.0);
    blk.conv1.b.value.fill(0.0);
    blk.conv2.w.value.fill(0.0);
    blk.conv2.b.value.fill(0.0);

    RNG data(2);
    Tensor<double> x({2, 4, 4, 4});
    for (auto& v : x) v = data.normal();
    auto y = run_eval(blk, x);
    REQUIRE(y.shape() == x.shape());
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("residual_block: shape, projection, determinism") {
    RNG rng(3);
    ResidualBlock<double> blk("r", cfg_of(3, 5), rng);
    CHECK(blk.projected);

    RNG data(4);
    Tensor<double> x({3, 5, 4, 6});
    for (auto& v : x) v = data.normal();
    auto y1 = run_eval(blk, x);
    REQUIRE(y1.shape() == std::vector<int>({5, 5, 4, 6}));

    // eval mode is pure: identical outputs, running stats untouched
    auto rm = blk.bn1.running_mean.clone();
    auto y2 = run_eval(blk, x);
    for (size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
    for (size_t i = 0; i < rm.numel(); ++i) CHECK(blk.bn1.running_mean[i] == rm[i]);

    Tensor<double> bad({2, 4, 4, 4});
    CHECK_THROWS_AS(run_eval(blk, bad), shape_error);
}

TEST_CASE("gradcheck: residual_block wrt input (eval mode)") {
    RNG rng(5);
    ResidualBlock<double> blk("r", cfg_of(2, 3), rng);
    // nontrivial running stats so BN eval isn't a plain identity
    for (int c = 0; c < 3; ++c) {
        blk.bn1.running_mean[size_t(c)] = 0.1 * (c + 1);
        blk.bn1.running_var[size_t(c)] = 1.0 + 0.2 * c;
    }
    RNG data(6);
    Tensor<double> x({2, 4, 4, 4});
    for (auto& v : x) v = data.normal();

    RNG probe(7);
    const double err = testutil::gradcheck_leaf(
        [&](Var<double>& leaf) { return vsum(blk.forward(leaf, TrainContext::eval())); }, x, 40,
        probe);
    CHECK(err < 1e-4);
}

TEST_CASE("dilated_block: reduction contract and tiny inputs") {
    RNG rng(8);
    DilatedBlock<double> blk("d", cfg_of(2, 4), rng);

    RNG data(9);
    Tensor<double> x({2, 9, 8, 7});
    for (auto& v : x) v = data.normal();
    CHECK(run_eval(blk, x).shape() == std::vector<int>({4, 9, 8, 7}));

    Tensor<double> tiny({2, 1, 1, 1});
    tiny.fill(0.5);
    CHECK(run_eval(blk, tiny).shape() == std::vector<int>({4, 1, 1, 1}));
}

TEST_CASE("dilated_block: padding preserves size for d in {6,12,18} on 32^3") {
    RNG rng(10);
    DilatedBlock<float> blk("d", cfg_of(1, 2), rng);
    Tensor<float> x({1, 32, 32, 32});
    RNG data(11);
    for (auto& v : x) v = float(data.uniform());
    auto y = blk.forward(Var<float>::constant(x), TrainContext::eval()).val();
    CHECK(y.shape() == std::vector<int>({2, 32, 32, 32}));
}

TEST_CASE("dilated_block: constant input gives constant interior branch responses") {
    RNG rng(12);
    DilatedBlock<double> blk("d", cfg_of(1, 2), rng);
    const int N = 40;
    Tensor<double> x = Tensor<double>::full({1, N, N, N}, 0.7);

    for (size_t bi = 0; bi < blk.branches.size(); ++bi) {
        auto& conv = blk.branches[bi];
        const int d = conv.dilation;
        auto y = conv3d(Var<double>::constant(x), use(conv.w), use(conv.b), d).val();
        const double ref = y.at(0, N / 2, N / 2, N / 2);
        CHECK(ref != 0.0);
        for (int z = d; z < N - d; z += 3)
            for (int yy = d; yy < N - d; yy += 3)
                for (int xx = d; xx < N - d; xx += 3)
                    CHECK(y.at(0, z, yy, xx) == doctest::Approx(ref).epsilon(1e-10));
        // padding-affected voxel differs (zero-sum coincidences aside)
        CHECK(y.at(0, 0, 0, 0) != doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("inception_block: channel arithmetic and divisibility") {
    RNG rng(13);
    InceptionBlock<double> blk("i", cfg_of(3, 8), rng);
    RNG data(14);
    Tensor<double> x({3, 6, 5, 4});
    for (auto& v : x) v = data.normal();
    CHECK(run_eval(blk, x).shape() == std::vector<int>({8, 6, 5, 4}));

    CHECK_THROWS_AS(InceptionBlock<double>("i", cfg_of(3, 6), rng), argument_error);
}

TEST_CASE("inception_block: max-pool branch dilates a one-hot input") {
    RNG rng(15);
    InceptionBlock<double> blk("i", cfg_of(1, 8), rng);
    for (auto* c : {&blk.a1, &blk.b1, &blk.b3, &blk.c1, &blk.c5}) {
        c->w.value.fill(0.0);
        c->b.value.fill(0.0);
    }
    blk.d1.w.value.fill(0.0);
    blk.d1.b.value.fill(0.0);
    blk.d1.w.value[0] = 1.0; // branch-d channel 0 passes the pooled map through

    Tensor<double> x({1, 5, 5, 5});
    x.at(0, 2, 2, 2) = 1.0;
    auto y = run_eval(blk, x);
    for (int z = 0; z < 5; ++z)
        for (int yy = 0; yy < 5; ++yy)
            for (int xx = 0; xx < 5; ++xx) {
                const bool in3 = std::abs(z - 2) <= 1 && std::abs(yy - 2) <= 1 &&
                                 std::abs(xx - 2) <= 1;
                CHECK(y.at(6, z, yy, xx) == (in3 ? 1.0 : 0.0)); // q=2: branch d at channels 6,7
                CHECK(y.at(7, z, yy, xx) == 0.0);
            }
}

TEST_CASE("dense_fusion_block: channel arithmetic and constructed identity") {
    RNG rng(16);
    BlockConfig c = cfg_of(2, 2);
    c.dense_growth = 3;
    DenseFusionBlock<double> blk("f", c, rng);
    CHECK(blk.reduce.w.value.shape() == std::vector<int>({2, 2 + 3 * 3, 1, 1, 1}));

    for (auto* l : {&blk.l1, &blk.l2, &blk.l3}) {
        l->w.value.fill(0.0);
        l->b.value.fill(0.0);
    }
    blk.reduce.w.value.fill(0.0);
    blk.reduce.b.value.fill(0.0);
    // pass-through: out channel o reads input channel o of the concatenation
    blk.reduce.w.value[0 * 11 + 0] = 1.0;
    blk.reduce.w.value[1 * 11 + 1] = 1.0;

    RNG data(17);
    Tensor<double> x({2, 4, 4, 4});
    for (auto& v : x) v = data.normal();
    auto y = run_eval(blk, x);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("gradcheck: dense_fusion_block wrt input") {
    RNG rng(18);
    BlockConfig c = cfg_of(2, 2);
    c.dense_growth = 2;
    DenseFusionBlock<double> blk("f", c, rng);
    RNG data(19);
    Tensor<double> x({2, 4, 4, 4});
    for (auto& v : x) v = data.normal();

    RNG probe(20);
    const double err = testutil::gradcheck_leaf(
        [&](Var<double>& leaf) { return vsum(blk.forward(leaf, TrainContext::eval())); }, x, 40,
        probe);
    CHECK(err < 1e-4);
}

TEST_CASE("blocks: parameter counts match collected tensors") {
    RNG rng(21);
    ResidualBlock<float> r("r", cfg_of(2, 3), rng);
    DilatedBlock<float> d("d", cfg_of(2, 3), rng);
    InceptionBlock<float> i("i", cfg_of(2, 4), rng);
    BlockConfig fc = cfg_of(2, 3);
    DenseFusionBlock<float> f("f", fc, rng);

    auto count = [](auto& blk) {
        std::vector<TensorRef<float>> refs;
        blk.collect(refs);
        size_t trainable = 0;
        for (auto& ref : refs)
            if (ref.trainable) trainable += ref.value->numel();
        return trainable;
    };
    CHECK(count(r) == r.n_params());
    CHECK(count(d) == d.n_params());
    CHECK(count(i) == i.n_params());
    CHECK(count(f) == f.n_params());

    // names are unique within a block
    std::vector<TensorRef<float>> refs;
    r.collect(refs);
    d.collect(refs);
    i.collect(refs);
    f.collect(refs);
    for (size_t a = 0; a < refs.size(); ++a)
        for (size_t b = a + 1; b < refs.size(); ++b) CHECK(refs[a].name != refs[b].name);
}
