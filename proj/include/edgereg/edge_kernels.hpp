#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edgereg/nn.hpp"
#include "edgereg/tensor.hpp"

namespace edgereg {

// Discrete 3D Laplacian stencils (3x3x3). The 6-connectivity form (center -6,
// face neighbours +1) is the default; 26-connectivity (center -26, all
// neighbours +1) is available as a configuration option.
template <class T>
Tensor<T> laplacian3d();
template <class T>
Tensor<T> laplacian3d_26();

// Learnable edge-detection bank: c_out filters of shape c_in x 3 x 3 x 3,
// Laplacian-initialized with multiplicative noise, Leaky ReLU activation and
// max-mean-response channel selection.
template <class T>
struct EdgeKernelBank {
    Param<T> w, b;          // w: {c_out, c_in, 3, 3, 3}, b: {c_out}
    Tensor<T> base_kernel;  // the 3x3x3 stencil used at init
    T perturbation_scale = T(0.1);
    T leaky_slope = T(0.01);
    int select_n = 16;

    int c_out() const { return w.value.dim(0); }
    int c_in() const { return w.value.dim(1); }
    bool trainable() const { return w.trainable; }
    void set_trainable(bool t) { w.trainable = b.trainable = t; }

    void collect(std::vector<TensorRef<T>>& out) {
        w.ensure_grad();
        b.ensure_grad();
        out.push_back({w.name, &w.value, &w.grad, w.trainable});
        out.push_back({b.name, &b.value, &b.grad, b.trainable});
    }
    size_t n_params() const { return w.value.numel() + b.value.numel(); }
};

// Each filter is the base stencil replicated over input slices, scaled by
// 1/c_in, every entry independently multiplied by (1 + perturbation_scale*eps)
// with eps ~ N(0,1) from a stream seeded by `seed`; bias zero.
template <class T>
EdgeKernelBank<T> init_edge_bank(const std::string& name, int c_in, int c_out, uint64_t seed,
                                 int select_n = 16, T perturbation_scale = T(0.1),
                                 T leaky_slope = T(0.01), bool connectivity26 = false);

// Convolution (zero padding, same size) + bias + Leaky ReLU, then keep the
// select_n channels with the largest spatial mean activation, ordered by
// descending mean (ties: ascending channel index). Gradients flow only through
// the selected channels. `selected` (optional) receives the chosen indices.
template <class T>
Var<T> edge_forward(EdgeKernelBank<T>& bank, const Var<T>& feat,
                    std::vector<int>* selected = nullptr);

// ---- analytics ----

struct KernelSnapshot {
    int epoch = 0;
    Tensor<double> filters; // deep copy, {c_out, c_in, 3, 3, 3}
};

template <class T>
KernelSnapshot snapshot(const EdgeKernelBank<T>& bank, int epoch);

// Appends, enforcing strictly increasing epochs within the series.
void append_snapshot(std::vector<KernelSnapshot>& series, KernelSnapshot snap);

// One 8-bit grayscale PNG per kernel per depth slice, named
// kernel{K:03}_slice{S}.png, symmetric gray scale about 0 (per kernel, first
// input slice), each stencil cell rendered as an upscale x upscale block.
void export_heatmaps(const KernelSnapshot& snap, const std::string& out_dir, int upscale = 32);

// One strip per snapshot tiling all kernels horizontally, the three depth
// slices stacked vertically; named evolution_epoch{E:04}.png.
void export_evolution_strip(const KernelSnapshot& snap, const std::string& out_dir,
                            int upscale = 8);

struct PcaResult {
    std::vector<std::pair<double, double>> points; // one (pc1, pc2) per kernel
    double ev1 = 0, ev2 = 0;                       // explained-variance ratios, descending
};

// PCA over kernels: each flattened to the 27 entries of its first input slice,
// centered; top-2 components with deterministic sign convention.
PcaResult pca_project(const Tensor<double>& filters);
inline PcaResult pca_project(const KernelSnapshot& s) { return pca_project(s.filters); }

// CSV with header kernel_id,pc1,pc2 and sidecar line explained_variance,ev1,ev2.
void write_pca_csv(const PcaResult& r, const std::string& path);

} // namespace edgereg
