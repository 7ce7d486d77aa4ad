#pragma once

#include <cstdint>
#include <vector>

#include "edgereg/conv_blocks.hpp"
#include "edgereg/edge_kernels.hpp"
#include "edgereg/spatial.hpp"

namespace edgereg {

// Variants of the affine-registration encoder:
//   1: frozen Laplacian banks -> concat -> levels x (residual + pool) -> refine
//   2: as 1, banks trainable and noise-perturbed
//   3: banks -> concat -> stem conv + residual -> edge module in the FIRST
//      downsampling block only, remaining blocks residual-only
//   4: as 3 with an edge module in every downsampling block
struct RigidModelConfig {
    int variant = 4;
    int base_channels = 16;
    int levels = 3;
    int fc_hidden = 128;
    double dropout_p = 0.1;
    int edge_c_out = 32; // input-bank width before selection
    int edge_select = 16;

    void validate() const;
};

template <class T>
class RigidNet {
  public:
    RigidNet() = default;
    RigidNet(const RigidModelConfig& cfg, uint64_t seed);

    // moving/fixed: {Z,Y,X} tensors; returns the 12-vector of affine parameters.
    Var<T> forward_params(const Tensor<T>& moving, const Tensor<T>& fixed,
                          const TrainContext& ctx);
    // eval-mode convenience: compose the predicted transform
    AffineTransform predict(const Tensor<T>& moving, const Tensor<T>& fixed);

    size_t count_parameters() const; // trainable entries only
    void collect(std::vector<TensorRef<T>>& out);
    const RigidModelConfig& config() const { return cfg_; }

    // exposed for tests and kernel analytics
    EdgeKernelBank<T>& bank_moving() { return bank_m_; }
    EdgeKernelBank<T>& bank_fixed() { return bank_f_; }
    EdgeKernelBank<T>* stage_bank(int level);

  private:
    struct Stage {
        bool has_edge = false;
        EdgeKernelBank<T> edge;
        ResidualBlock<T> res;
    };

    RigidModelConfig cfg_;
    EdgeKernelBank<T> bank_m_, bank_f_;
    bool has_stem_ = false;
    Conv3dLayer<T> stem_conv_;
    ResidualBlock<T> stem_res_;
    std::vector<Stage> stages_;
    bool has_refine_ = false;
    ResidualBlock<T> refine_;
    LinearLayer<T> fc1_, fc2_;
    DropoutLayer<T> drop_;
};

} // namespace edgereg
