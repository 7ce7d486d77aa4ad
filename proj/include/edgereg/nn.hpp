#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgereg/autodiff.hpp"
#include "edgereg/ops.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    }
};

// Named view over a model tensor; params carry gradients, buffers (running
// statistics) are serialised but never optimised.
template <class T>
struct TensorRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr; // null for buffers
    bool trainable = false;
};

template <class T>
Var<T> use(Param<T>& p) {
    auto v = Var<T>::leaf(p.value, p.trainable);
    if (p.trainable) {
        p.ensure_grad();
        v.node()->grad = p.grad;
    }
    return v;
}

struct TrainContext {
    bool bn_train = false;     // batch statistics vs running statistics
    bool dropout_on = false;   // stochastic dropout masks
    RNG* rng = nullptr;

    static TrainContext train(RNG& r) { return {true, true, &r}; }
    static TrainContext eval() { return {false, false, nullptr}; }
    static TrainContext mc_sample(RNG& r) { return {false, true, &r}; }
};

// Fan-in-scaled uniform init (Kaiming bound for ReLU fan-in).
template <class T>
void kaiming_uniform(Tensor<T>& t, size_t fan_in, RNG& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (auto& v : t) v = T(rng.uniform(-bound, bound));
}

template <class T>
struct Conv3dLayer {
    Param<T> w, b;
    int dilation = 1;

    Conv3dLayer() = default;
    Conv3dLayer(const std::string& name, int cin, int cout, int k, RNG& rng, bool zero_init = false,
                int dil = 1)
        : dilation(dil) {
        w.name = name + ".w";
        b.name = name + ".b";
        w.value = Tensor<T>({cout, cin, k, k, k});
        b.value = Tensor<T>({cout});
        if (!zero_init) kaiming_uniform(w.value, size_t(cin) * k * k * k, rng);
    }

    Var<T> forward(const Var<T>& x) { return conv3d(x, use(w), use(b), dilation); }

    void collect(std::vector<TensorRef<T>>& out) {
        w.ensure_grad();
        b.ensure_grad();
        out.push_back({w.name, &w.value, &w.grad, w.trainable});
        out.push_back({b.name, &b.value, &b.grad, b.trainable});
    }
    size_t n_params() const { return w.value.numel() + b.value.numel(); }
};

template <class T>
struct BatchNorm3d {
    Param<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    std::string prefix;

    BatchNorm3d() = default;
    BatchNorm3d(const std::string& name, int c) : prefix(name) {
        gamma.name = name + ".gamma";
        beta.name = name + ".beta";
        gamma.value = Tensor<T>::full({c}, T(1));
        beta.value = Tensor<T>({c});
        running_mean = Tensor<T>({c});
        running_var = Tensor<T>::full({c}, T(1));
    }

    Var<T> forward(const Var<T>& x, const TrainContext& ctx) {
        return batch_norm(x, use(gamma), use(beta), running_mean, running_var, ctx.bn_train);
    }

    void collect(std::vector<TensorRef<T>>& out) {
        gamma.ensure_grad();
        beta.ensure_grad();
        out.push_back({gamma.name, &gamma.value, &gamma.grad, gamma.trainable});
        out.push_back({beta.name, &beta.value, &beta.grad, beta.trainable});
        out.push_back({prefix + ".running_mean", &running_mean, nullptr, false});
        out.push_back({prefix + ".running_var", &running_var, nullptr, false});
    }
    size_t n_params() const { return gamma.value.numel() + beta.value.numel(); }
};

template <class T>
struct DropoutLayer {
    T p = T(0.1);
    DropoutLayer() = default;
    explicit DropoutLayer(T prob) : p(prob) {}

    Var<T> forward(const Var<T>& x, const TrainContext& ctx) {
        const bool active = ctx.dropout_on && ctx.rng != nullptr;
        if (!active || p == T(0)) return x; // identity: adds no tape node
        return dropout(x, p, active, *ctx.rng);
    }
};

template <class T>
struct LinearLayer {
    Param<T> w, b;

    LinearLayer() = default;
    LinearLayer(const std::string& name, int in, int out, RNG& rng, bool zero_init = false) {
        w.name = name + ".w";
        b.name = name + ".b";
        w.value = Tensor<T>({out, in});
        b.value = Tensor<T>({out});
        if (!zero_init) kaiming_uniform(w.value, size_t(in), rng);
    }

    Var<T> forward(const Var<T>& x) { return linear(x, use(w), use(b)); }

    void collect(std::vector<TensorRef<T>>& out) {
        w.ensure_grad();
        b.ensure_grad();
        out.push_back({w.name, &w.value, &w.grad, w.trainable});
        out.push_back({b.name, &b.value, &b.grad, b.trainable});
    }
    size_t n_params() const { return w.value.numel() + b.value.numel(); }
};

} // namespace edgereg
