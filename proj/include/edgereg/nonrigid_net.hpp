#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "edgereg/conv_blocks.hpp"
#include "edgereg/edge_kernels.hpp"
#include "edgereg/volume.hpp"

namespace edgereg {

// U-shaped displacement-field regressors. Encoder per variant:
//   1: concat -> stem -> blocks of (residual -> edge -> pool)
//   2: concat -> stem -> (edge -> dense fusion -> pool), then residual blocks
//   3: concat -> stem -> dense-fusion blocks (no edge modules)
//   4: edge banks per input -> concat -> stem -> blocks of
//      (edge -> inception -> residual -> pool)
// All variants: dilated-convolution bottleneck; decoder stages of 2x trilinear
// upsampling + optional skip concatenation + residual/ReLU; zero-initialized
// final 3-channel convolution.
struct NonRigidModelConfig {
    int variant = 4;
    int base_channels = 16;
    int levels = 3;
    bool skip_connections = true;
    std::vector<int> dilation_rates = {6, 12, 18};
    double dropout_p = 0.1;
    int edge_c_out = 32; // input banks (variant 4 only)
    int edge_select = 16;

    void validate() const;
};

// One step of the receptive-field composition walk.
struct RFStep {
    enum class Kind { conv, pool2, up2 };
    Kind kind = Kind::conv;
    int k = 1;
    int dil = 1;
};

int receptive_field_1d(const std::vector<RFStep>& steps);

template <class T>
class NonRigidNet {
  public:
    NonRigidNet() = default;
    NonRigidNet(const NonRigidModelConfig& cfg, uint64_t seed);

    // moving/fixed: {Z,Y,X}; returns the displacement field {3,Z,Y,X} in voxels.
    Var<T> forward_field(const Tensor<T>& moving, const Tensor<T>& fixed,
                         const TrainContext& ctx);
    DisplacementField predict(const Tensor<T>& moving, const Tensor<T>& fixed);

    size_t count_parameters() const;
    void collect(std::vector<TensorRef<T>>& out);
    std::array<int, 3> receptive_field() const;
    const NonRigidModelConfig& config() const { return cfg_; }

    EdgeKernelBank<T>* input_bank_moving() { return cfg_.variant == 4 ? &bank_m_ : nullptr; }
    EdgeKernelBank<T>* block_bank(int level);

  private:
    struct EncBlock {
        bool has_edge = false, has_dense = false, has_inception = false, has_res = false;
        EdgeKernelBank<T> edge;
        DenseFusionBlock<T> dense;
        InceptionBlock<T> inception;
        ResidualBlock<T> res;
        bool edge_after_res = false; // variant 1 order: residual then edge
    };
    struct DecBlock {
        ResidualBlock<T> res;
    };

    NonRigidModelConfig cfg_;
    EdgeKernelBank<T> bank_m_, bank_f_;
    Conv3dLayer<T> stem_conv_;
    ResidualBlock<T> stem_res_;
    std::vector<EncBlock> enc_;
    DilatedBlock<T> bottleneck_;
    std::vector<DecBlock> dec_;
    Conv3dLayer<T> final_;
    std::vector<RFStep> rf_;
};

} // namespace edgereg
