#pragma once

#include <string>
#include <vector>

#include "edgereg/nn.hpp"

namespace edgereg {

struct BlockConfig {
    int in_channels = 0;
    int out_channels = 0;
    double dropout_p = 0.1;
    std::vector<int> dilation_rates = {6, 12, 18};
    int dense_growth = 16;
    enum class Pool { average, none };
    Pool pool = Pool::average; // consumed by the enclosing downsampling arm

    void validate() const;
};

// Two (conv3 -> BN -> ReLU -> dropout) stages plus a skip path: identity when
// channels match, 1x1x1 convolution otherwise.
template <class T>
struct ResidualBlock {
    Conv3dLayer<T> conv1, conv2, proj;
    BatchNorm3d<T> bn1, bn2;
    DropoutLayer<T> drop;
    bool projected = false;

    ResidualBlock() = default;
    ResidualBlock(const std::string& name, const BlockConfig& cfg, RNG& rng);
    Var<T> forward(const Var<T>& x, const TrainContext& ctx);
    void collect(std::vector<TensorRef<T>>& out);
    size_t n_params() const;
};

// Parallel dilated conv3 branches (each conv -> ReLU -> BN), concatenated and
// reduced by a 1x1x1 convolution.
template <class T>
struct DilatedBlock {
    std::vector<Conv3dLayer<T>> branches;
    std::vector<BatchNorm3d<T>> norms;
    Conv3dLayer<T> reduce;

    DilatedBlock() = default;
    DilatedBlock(const std::string& name, const BlockConfig& cfg, RNG& rng);
    Var<T> forward(const Var<T>& x, const TrainContext& ctx);
    void collect(std::vector<TensorRef<T>>& out);
    size_t n_params() const;
};

// Four parallel branches, each out_channels/4 wide: 1x1x1; 1x1x1 -> 3x3x3;
// 1x1x1 -> 5x5x5; maxpool3 (stride 1) -> 1x1x1. ReLU after every convolution.
template <class T>
struct InceptionBlock {
    Conv3dLayer<T> a1, b1, b3, c1, c5, d1;

    InceptionBlock() = default;
    InceptionBlock(const std::string& name, const BlockConfig& cfg, RNG& rng);
    Var<T> forward(const Var<T>& x, const TrainContext& ctx);
    void collect(std::vector<TensorRef<T>>& out);
    size_t n_params() const;
};

// Three conv3+ReLU layers of dense_growth maps each, densely concatenated with
// the input, then a 1x1x1 reduction to out_channels.
template <class T>
struct DenseFusionBlock {
    Conv3dLayer<T> l1, l2, l3, reduce;

    DenseFusionBlock() = default;
    DenseFusionBlock(const std::string& name, const BlockConfig& cfg, RNG& rng);
    Var<T> forward(const Var<T>& x, const TrainContext& ctx);
    void collect(std::vector<TensorRef<T>>& out);
    size_t n_params() const;
};

} // namespace edgereg
