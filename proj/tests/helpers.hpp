#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "edgereg/autodiff.hpp"
#include "edgereg/rng.hpp"
#include "edgereg/tensor.hpp"
#include "edgereg/volume.hpp"

namespace testutil {

using namespace edgereg;

inline Tensor<double> random_tensor(std::vector<int> shape, RNG& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor<float> random_tensor_f(std::vector<int> shape, RNG& rng, float lo = -1, float hi = 1) {
    Tensor<float> t(std::move(shape));
    for (auto& v : t) v = float(rng.uniform(lo, hi));
    return t;
}

// Central finite differences against reverse-mode gradients. `build` must
// construct the scalar loss freshly from the CURRENT contents of x on every
// call; `leaf` inside build shares x's storage so perturbations flow through.
// Returns the max relative error over `probes` randomly chosen entries.
inline double gradcheck(const std::function<Var<double>(bool)>& build, Tensor<double>& x,
                        Tensor<double>& analytic_grad, int probes, RNG& rng, double h = 1e-4,
                        double atol = 1e-7) {
    double worst = 0;
    const size_t n = x.numel();
    for (int t = 0; t < probes; ++t) {
        const size_t i = n == 1 ? 0 : rng.below(n);
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = build(false).item();
        x[i] = keep - h;
        const double fm = build(false).item();
        x[i] = keep;
        const double fd = (fp - fm) / (2 * h);
        const double an = analytic_grad[i];
        if (std::abs(fd - an) <= atol) continue; // below finite-difference noise
        const double denom = std::max(1e-8, std::abs(fd) + std::abs(an));
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

// convenience wrapper: builds the loss, runs backward, then probes
inline double gradcheck_leaf(const std::function<Var<double>(Var<double>&)>& make_loss,
                             Tensor<double> x, int probes, RNG& rng, double h = 1e-4,
                             double atol = 1e-7) {
    Var<double> leaf; // shares x storage across rebuilds
    auto build = [&](bool with_grad) {
        leaf = Var<double>::leaf(x, with_grad);
        return make_loss(leaf);
    };
    auto loss = build(true);
    backward(loss);
    Tensor<double> g = leaf.grad().clone();
    return gradcheck([&](bool) { return build(false); }, x, g, probes, rng, h, atol);
}

// Dice over one label value; independent of the library's metrics module.
inline double label_dice(const LabelVolume& a, const LabelVolume& b, uint8_t label) {
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.data.numel(); ++i) {
        const bool ia = a.data[i] == label, ib = b.data[i] == label;
        na += ia;
        nb += ib;
        inter += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

} // namespace testutil
