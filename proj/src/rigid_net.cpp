#include "edgereg/rigid_net.hpp"

#include <string>

#include "edgereg/errors.hpp"

namespace edgereg {

void RigidModelConfig::validate() const {
    require(variant >= 1 && variant <= 4, "rigid: variant must be 1..4");
    require(base_channels >= 1, "rigid: base_channels must be >= 1");
    require(levels >= 1, "rigid: levels must be >= 1");
    require(fc_hidden >= 1, "rigid: fc_hidden must be >= 1");
    require(dropout_p >= 0.0 && dropout_p < 1.0, "rigid: dropout_p must be in [0,1)");
    require(edge_select >= 1 && edge_c_out >= edge_select,
            "rigid: edge bank needs c_out >= select_n >= 1");
}

namespace {

BlockConfig res_cfg(int cin, int cout, double p) {
    BlockConfig c;
    c.in_channels = cin;
    c.out_channels = cout;
    c.dropout_p = p;
    return c;
}

} // namespace

template <class T>
RigidNet<T>::RigidNet(const RigidModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    RNG rng(RNG::mix(seed, 0));

    // input banks: variant 1 freezes the pure Laplacian (no perturbation)
    const bool frozen = cfg.variant == 1;
    const T ps = frozen ? T(0) : T(0.1);
    bank_m_ = init_edge_bank<T>("bank_m", 1, cfg.edge_c_out, RNG::mix(seed, 1), cfg.edge_select,
                                ps);
    bank_f_ = init_edge_bank<T>("bank_f", 1, cfg.edge_c_out, RNG::mix(seed, 2), cfg.edge_select,
                                ps);
    if (frozen) {
        bank_m_.set_trainable(false);
        bank_f_.set_trainable(false);
    }

    int w = 2 * cfg.edge_select; // concatenated selections
    has_stem_ = cfg.variant >= 3;
    if (has_stem_) {
        stem_conv_ = Conv3dLayer<T>("stem.conv", w, cfg.base_channels, 3, rng);
        stem_res_ = ResidualBlock<T>("stem.res", res_cfg(cfg.base_channels, cfg.base_channels,
                                                         cfg.dropout_p),
                                     rng);
        w = cfg.base_channels;
    }

    stages_.resize(size_t(cfg.levels));
    for (int i = 0; i < cfg.levels; ++i) {
        auto& st = stages_[size_t(i)];
        const std::string prefix = "enc" + std::to_string(i);
        st.has_edge = (cfg.variant == 4) || (cfg.variant == 3 && i == 0);
        if (st.has_edge)
            st.edge = init_edge_bank<T>(prefix + ".edge", w, 2 * w, RNG::mix(seed, 16 + uint64_t(i)),
                                        w);
        const int wout = cfg.base_channels << i;
        st.res = ResidualBlock<T>(prefix + ".res", res_cfg(w, wout, cfg.dropout_p), rng);
        w = wout;
    }

    has_refine_ = cfg.variant <= 2;
    if (has_refine_) refine_ = ResidualBlock<T>("refine", res_cfg(w, w, cfg.dropout_p), rng);

    fc1_ = LinearLayer<T>("head.fc1", w, cfg.fc_hidden, rng);
    fc2_ = LinearLayer<T>("head.fc2", cfg.fc_hidden, 12, rng, /*zero_init=*/true);
    drop_ = DropoutLayer<T>(T(cfg.dropout_p));
}

template <class T>
Var<T> RigidNet<T>::forward_params(const Tensor<T>& moving, const Tensor<T>& fixed,
                                   const TrainContext& ctx) {
    require_shape(moving.rank() == 3 && fixed.rank() == 3, "rigid: inputs must be {Z,Y,X}");
    require_shape(moving.shape() == fixed.shape(), "rigid: moving/fixed dims differ");
    const int div = 1 << cfg_.levels;
    for (int a = 0; a < 3; ++a) {
        const int d = moving.dim(size_t(a));
        require_shape(d % div == 0, "rigid: dims must be divisible by " + std::to_string(div) +
                                        "; pad axis " + std::to_string(a) + " from " +
                                        std::to_string(d) + " to " +
                                        std::to_string((d + div - 1) / div * div));
    }

    auto xm = Var<T>::constant(moving.reshaped({1, moving.dim(0), moving.dim(1), moving.dim(2)}));
    auto xf = Var<T>::constant(fixed.reshaped({1, fixed.dim(0), fixed.dim(1), fixed.dim(2)}));

    auto x = concat_ch(std::vector<Var<T>>{edge_forward(bank_m_, xm), edge_forward(bank_f_, xf)});
    if (has_stem_) {
        x = relu(stem_conv_.forward(x));
        x = stem_res_.forward(x, ctx);
    }
    for (auto& st : stages_) {
        if (st.has_edge) x = edge_forward(st.edge, x);
        x = st.res.forward(x, ctx);
        x = avg_pool2(x);
    }
    if (has_refine_) x = refine_.forward(x, ctx);

    auto h = drop_.forward(relu(fc1_.forward(global_avg_pool(x))), ctx);
    return fc2_.forward(h);
}

template <class T>
AffineTransform RigidNet<T>::predict(const Tensor<T>& moving, const Tensor<T>& fixed) {
    auto p = forward_params(moving, fixed, TrainContext::eval());
    std::array<double, 12> a{};
    for (int i = 0; i < 12; ++i) a[size_t(i)] = double(p.val()[size_t(i)]);
    return AffineTransform::from_params(a);
}

template <class T>
void RigidNet<T>::collect(std::vector<TensorRef<T>>& out) {
    bank_m_.collect(out);
    bank_f_.collect(out);
    if (has_stem_) {
        stem_conv_.collect(out);
        stem_res_.collect(out);
    }
    for (auto& st : stages_) {
        if (st.has_edge) st.edge.collect(out);
        st.res.collect(out);
    }
    if (has_refine_) refine_.collect(out);
    fc1_.collect(out);
    fc2_.collect(out);
}

template <class T>
size_t RigidNet<T>::count_parameters() const {
    std::vector<TensorRef<T>> refs;
    const_cast<RigidNet<T>*>(this)->collect(refs);
    size_t n = 0;
    for (auto& r : refs)
        if (r.trainable) n += r.value->numel();
    return n;
}

template <class T>
EdgeKernelBank<T>* RigidNet<T>::stage_bank(int level) {
    if (level < 0 || size_t(level) >= stages_.size() || !stages_[size_t(level)].has_edge)
        return nullptr;
    return &stages_[size_t(level)].edge;
}

template class RigidNet<float>;
template class RigidNet<double>;

} // namespace edgereg
