#include "edgereg/conv_blocks.hpp"

#include "edgereg/errors.hpp"

namespace edgereg {

void BlockConfig::validate() const {
    require(in_channels >= 1, "block: in_channels must be >= 1");
    require(out_channels >= 1, "block: out_channels must be >= 1");
    require(dropout_p >= 0.0 && dropout_p < 1.0, "block: dropout_p must be in [0,1)");
    require(!dilation_rates.empty(), "block: dilation_rates must be nonempty");
    for (size_t i = 0; i < dilation_rates.size(); ++i) {
        require(dilation_rates[i] >= 1, "block: dilation rates must be >= 1");
        require(i == 0 || dilation_rates[i] > dilation_rates[i - 1],
                "block: dilation rates must be strictly increasing");
    }
    require(dense_growth >= 1, "block: dense_growth must be >= 1");
}

// ---- ResidualBlock ----

template <class T>
ResidualBlock<T>::ResidualBlock(const std::string& name, const BlockConfig& cfg, RNG& rng) {
    cfg.validate();
    conv1 = Conv3dLayer<T>(name + ".conv1", cfg.in_channels, cfg.out_channels, 3, rng);
    bn1 = BatchNorm3d<T>(name + ".bn1", cfg.out_channels);
    conv2 = Conv3dLayer<T>(name + ".conv2", cfg.out_channels, cfg.out_channels, 3, rng);
    bn2 = BatchNorm3d<T>(name + ".bn2", cfg.out_channels);
    drop = DropoutLayer<T>(T(cfg.dropout_p));
    projected = cfg.in_channels != cfg.out_channels;
    if (projected) proj = Conv3dLayer<T>(name + ".proj", cfg.in_channels, cfg.out_channels, 1, rng);
}

template <class T>
Var<T> ResidualBlock<T>::forward(const Var<T>& x, const TrainContext& ctx) {
    auto h = drop.forward(relu(bn1.forward(conv1.forward(x), ctx)), ctx);
    h = drop.forward(relu(bn2.forward(conv2.forward(h), ctx)), ctx);
    auto skip = projected ? proj.forward(x) : x;
    return add(h, skip);
}

template <class T>
void ResidualBlock<T>::collect(std::vector<TensorRef<T>>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
    if (projected) proj.collect(out);
}

template <class T>
size_t ResidualBlock<T>::n_params() const {
    return conv1.n_params() + bn1.n_params() + conv2.n_params() + bn2.n_params() +
           (projected ? proj.n_params() : 0);
}

// ---- DilatedBlock ----

template <class T>
DilatedBlock<T>::DilatedBlock(const std::string& name, const BlockConfig& cfg, RNG& rng) {
    cfg.validate();
    const int n = int(cfg.dilation_rates.size());
    for (int i = 0; i < n; ++i) {
        const int d = cfg.dilation_rates[size_t(i)];
        branches.emplace_back(name + ".d" + std::to_string(d), cfg.in_channels, cfg.out_channels,
                              3, rng, false, d);
        norms.emplace_back(name + ".bn" + std::to_string(d), cfg.out_channels);
    }
    reduce = Conv3dLayer<T>(name + ".reduce", n * cfg.out_channels, cfg.out_channels, 1, rng);
}

template <class T>
Var<T> DilatedBlock<T>::forward(const Var<T>& x, const TrainContext& ctx) {
    std::vector<Var<T>> ys;
    for (size_t i = 0; i < branches.size(); ++i)
        ys.push_back(norms[i].forward(relu(branches[i].forward(x)), ctx));
    return reduce.forward(concat_ch(ys));
}

template <class T>
void DilatedBlock<T>::collect(std::vector<TensorRef<T>>& out) {
    for (size_t i = 0; i < branches.size(); ++i) {
        branches[i].collect(out);
        norms[i].collect(out);
    }
    reduce.collect(out);
}

template <class T>
size_t DilatedBlock<T>::n_params() const {
    size_t n = reduce.n_params();
    for (size_t i = 0; i < branches.size(); ++i) n += branches[i].n_params() + norms[i].n_params();
    return n;
}

// ---- InceptionBlock ----

template <class T>
InceptionBlock<T>::InceptionBlock(const std::string& name, const BlockConfig& cfg, RNG& rng) {
    cfg.validate();
    require(cfg.out_channels % 4 == 0, "inception: out_channels must be divisible by 4");
    const int q = cfg.out_channels / 4;
    a1 = Conv3dLayer<T>(name + ".a1", cfg.in_channels, q, 1, rng);
    b1 = Conv3dLayer<T>(name + ".b1", cfg.in_channels, q, 1, rng);
    b3 = Conv3dLayer<T>(name + ".b3", q, q, 3, rng);
    c1 = Conv3dLayer<T>(name + ".c1", cfg.in_channels, q, 1, rng);
    c5 = Conv3dLayer<T>(name + ".c5", q, q, 5, rng);
    d1 = Conv3dLayer<T>(name + ".d1", cfg.in_channels, q, 1, rng);
}

template <class T>
Var<T> InceptionBlock<T>::forward(const Var<T>& x, const TrainContext&) {
    auto ya = relu(a1.forward(x));
    auto yb = relu(b3.forward(relu(b1.forward(x))));
    auto yc = relu(c5.forward(relu(c1.forward(x))));
    auto yd = relu(d1.forward(max_pool3_same(x)));
    return concat_ch(std::vector<Var<T>>{ya, yb, yc, yd});
}

template <class T>
void InceptionBlock<T>::collect(std::vector<TensorRef<T>>& out) {
    a1.collect(out);
    b1.collect(out);
    b3.collect(out);
    c1.collect(out);
    c5.collect(out);
    d1.collect(out);
}

template <class T>
size_t InceptionBlock<T>::n_params() const {
    return a1.n_params() + b1.n_params() + b3.n_params() + c1.n_params() + c5.n_params() +
           d1.n_params();
}

// ---- DenseFusionBlock ----

template <class T>
DenseFusionBlock<T>::DenseFusionBlock(const std::string& name, const BlockConfig& cfg, RNG& rng) {
    cfg.validate();
    const int g = cfg.dense_growth;
    l1 = Conv3dLayer<T>(name + ".l1", cfg.in_channels, g, 3, rng);
    l2 = Conv3dLayer<T>(name + ".l2", cfg.in_channels + g, g, 3, rng);
    l3 = Conv3dLayer<T>(name + ".l3", cfg.in_channels + 2 * g, g, 3, rng);
    reduce = Conv3dLayer<T>(name + ".reduce", cfg.in_channels + 3 * g, cfg.out_channels, 1, rng);
}

template <class T>
Var<T> DenseFusionBlock<T>::forward(const Var<T>& x, const TrainContext&) {
    auto y1 = relu(l1.forward(x));
    auto c1v = concat_ch(std::vector<Var<T>>{x, y1});
    auto y2 = relu(l2.forward(c1v));
    auto c2v = concat_ch(std::vector<Var<T>>{x, y1, y2});
    auto y3 = relu(l3.forward(c2v));
    auto c3v = concat_ch(std::vector<Var<T>>{x, y1, y2, y3});
    return reduce.forward(c3v);
}

template <class T>
void DenseFusionBlock<T>::collect(std::vector<TensorRef<T>>& out) {
    l1.collect(out);
    l2.collect(out);
    l3.collect(out);
    reduce.collect(out);
}

template <class T>
size_t DenseFusionBlock<T>::n_params() const {
    return l1.n_params() + l2.n_params() + l3.n_params() + reduce.n_params();
}

#define EDGEREG_BLOCKS_INSTANTIATE(T)  \
    template struct ResidualBlock<T>;  \
    template struct DilatedBlock<T>;   \
    template struct InceptionBlock<T>; \
    template struct DenseFusionBlock<T>;

EDGEREG_BLOCKS_INSTANTIATE(float)
EDGEREG_BLOCKS_INSTANTIATE(double)

} // namespace edgereg
