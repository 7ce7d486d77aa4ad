#include "edgereg/nonrigid_net.hpp"

#include <cmath>
#include <string>

#include "edgereg/errors.hpp"

namespace edgereg {

void NonRigidModelConfig::validate() const {
    require(variant >= 1 && variant <= 4, "nonrigid: variant must be 1..4");
    require(base_channels >= 1, "nonrigid: base_channels must be >= 1");
    require(levels >= 1, "nonrigid: levels must be >= 1");
    require(dropout_p >= 0.0 && dropout_p < 1.0, "nonrigid: dropout_p must be in [0,1)");
    require(!dilation_rates.empty(), "nonrigid: dilation_rates must be nonempty");
    require(edge_select >= 1 && edge_c_out >= edge_select,
            "nonrigid: edge bank needs c_out >= select_n >= 1");
    if (variant == 4)
        require(base_channels % 4 == 0,
                "nonrigid: variant 4 needs base_channels divisible by 4 (inception branches)");
}

int receptive_field_1d(const std::vector<RFStep>& steps) {
    double r = 1, j = 1;
    for (const auto& s : steps) {
        switch (s.kind) {
            case RFStep::Kind::conv: r += double(s.k - 1) * double(s.dil) * j; break;
            case RFStep::Kind::pool2:
                r += j;
                j *= 2;
                break;
            case RFStep::Kind::up2:
                r += j;
                j *= 0.5;
                break;
        }
    }
    return int(std::lround(r));
}

namespace {

BlockConfig blk_cfg(int cin, int cout, double p, const std::vector<int>* rates = nullptr) {
    BlockConfig c;
    c.in_channels = cin;
    c.out_channels = cout;
    c.dropout_p = p;
    if (rates) c.dilation_rates = *rates;
    return c;
}

} // namespace

template <class T>
NonRigidNet<T>::NonRigidNet(const NonRigidModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    RNG rng(RNG::mix(seed, 0));
    const int B = cfg.base_channels;

    int stem_in = 2;
    if (cfg.variant == 4) {
        bank_m_ = init_edge_bank<T>("bank_m", 1, cfg.edge_c_out, RNG::mix(seed, 1),
                                    cfg.edge_select);
        bank_f_ = init_edge_bank<T>("bank_f", 1, cfg.edge_c_out, RNG::mix(seed, 2),
                                    cfg.edge_select);
        stem_in = 2 * cfg.edge_select;
    }
    stem_conv_ = Conv3dLayer<T>("stem.conv", stem_in, B, 3, rng);
    stem_res_ = ResidualBlock<T>("stem.res", blk_cfg(B, B, cfg.dropout_p), rng);
    rf_.push_back({RFStep::Kind::conv, 3, 1});              // input bank or stem conv
    if (cfg.variant == 4) rf_.push_back({RFStep::Kind::conv, 3, 1}); // bank + stem
    rf_.push_back({RFStep::Kind::conv, 3, 1});              // stem residual
    rf_.push_back({RFStep::Kind::conv, 3, 1});

    enc_.resize(size_t(cfg.levels));
    int w = B;
    for (int i = 0; i < cfg.levels; ++i) {
        auto& b = enc_[size_t(i)];
        const int wout = B << i;
        const std::string prefix = "enc" + std::to_string(i);
        switch (cfg.variant) {
            case 1:
                b.has_res = b.has_edge = true;
                b.edge_after_res = true;
                b.res = ResidualBlock<T>(prefix + ".res", blk_cfg(w, wout, cfg.dropout_p), rng);
                b.edge = init_edge_bank<T>(prefix + ".edge", wout, 2 * wout,
                                           RNG::mix(seed, 16 + uint64_t(i)), wout);
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                break;
            case 2:
                if (i == 0) {
                    b.has_edge = b.has_dense = true;
                    b.edge = init_edge_bank<T>(prefix + ".edge", w, 2 * w, RNG::mix(seed, 16), w);
                    b.dense = DenseFusionBlock<T>(prefix + ".dense",
                                                  blk_cfg(w, wout, cfg.dropout_p), rng);
                    rf_.push_back({RFStep::Kind::conv, 3, 1});
                    for (int c = 0; c < 3; ++c) rf_.push_back({RFStep::Kind::conv, 3, 1});
                } else {
                    b.has_res = true;
                    b.res = ResidualBlock<T>(prefix + ".res", blk_cfg(w, wout, cfg.dropout_p),
                                             rng);
                    rf_.push_back({RFStep::Kind::conv, 3, 1});
                    rf_.push_back({RFStep::Kind::conv, 3, 1});
                }
                break;
            case 3:
                b.has_dense = true;
                b.dense = DenseFusionBlock<T>(prefix + ".dense", blk_cfg(w, wout, cfg.dropout_p),
                                              rng);
                for (int c = 0; c < 3; ++c) rf_.push_back({RFStep::Kind::conv, 3, 1});
                break;
            case 4:
                b.has_edge = b.has_inception = b.has_res = true;
                b.edge = init_edge_bank<T>(prefix + ".edge", w, 2 * w,
                                           RNG::mix(seed, 16 + uint64_t(i)), w);
                b.inception = InceptionBlock<T>(prefix + ".inc", blk_cfg(w, wout, cfg.dropout_p),
                                                rng);
                b.res = ResidualBlock<T>(prefix + ".res", blk_cfg(wout, wout, cfg.dropout_p),
                                         rng);
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                rf_.push_back({RFStep::Kind::conv, 5, 1});
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                rf_.push_back({RFStep::Kind::conv, 3, 1});
                break;
        }
        rf_.push_back({RFStep::Kind::pool2});
        w = wout;
    }

    bottleneck_ = DilatedBlock<T>("bottleneck", blk_cfg(w, w, cfg.dropout_p, &cfg.dilation_rates),
                                  rng);
    int dmax = 1;
    for (int d : cfg.dilation_rates) dmax = std::max(dmax, d);
    rf_.push_back({RFStep::Kind::conv, 3, dmax});

    dec_.resize(size_t(cfg.levels));
    for (int j = 0; j < cfg.levels; ++j) {
        const int target = B << (cfg.levels - 1 - j);
        const int skip_w = cfg.skip_connections ? target : 0;
        dec_[size_t(j)].res = ResidualBlock<T>(
            "dec" + std::to_string(j) + ".res", blk_cfg(w + skip_w, target, cfg.dropout_p), rng);
        rf_.push_back({RFStep::Kind::up2});
        rf_.push_back({RFStep::Kind::conv, 3, 1});
        rf_.push_back({RFStep::Kind::conv, 3, 1});
        w = target;
    }

    final_ = Conv3dLayer<T>("final", w, 3, 3, rng, /*zero_init=*/true);
    rf_.push_back({RFStep::Kind::conv, 3, 1});
}

template <class T>
Var<T> NonRigidNet<T>::forward_field(const Tensor<T>& moving, const Tensor<T>& fixed,
                                     const TrainContext& ctx) {
    require_shape(moving.rank() == 3 && fixed.rank() == 3, "nonrigid: inputs must be {Z,Y,X}");
    require_shape(moving.shape() == fixed.shape(), "nonrigid: moving/fixed dims differ");
    const int div = 1 << cfg_.levels;
    for (int a = 0; a < 3; ++a) {
        const int d = moving.dim(size_t(a));
        require_shape(d % div == 0, "nonrigid: dims must be divisible by " + std::to_string(div) +
                                        "; pad axis " + std::to_string(a) + " from " +
                                        std::to_string(d) + " to " +
                                        std::to_string((d + div - 1) / div * div));
    }

    auto xm = Var<T>::constant(moving.reshaped({1, moving.dim(0), moving.dim(1), moving.dim(2)}));
    auto xf = Var<T>::constant(fixed.reshaped({1, fixed.dim(0), fixed.dim(1), fixed.dim(2)}));

    Var<T> x;
    if (cfg_.variant == 4)
        x = concat_ch(std::vector<Var<T>>{edge_forward(bank_m_, xm), edge_forward(bank_f_, xf)});
    else
        x = concat_ch(std::vector<Var<T>>{xm, xf});
    x = relu(stem_conv_.forward(x));
    x = stem_res_.forward(x, ctx);

    std::vector<Var<T>> skips;
    for (auto& b : enc_) {
        if (b.edge_after_res) { // variant 1: residual then edge
            x = b.res.forward(x, ctx);
            x = edge_forward(b.edge, x);
        } else {
            if (b.has_edge) x = edge_forward(b.edge, x);
            if (b.has_inception) x = b.inception.forward(x, ctx);
            if (b.has_dense) x = b.dense.forward(x, ctx);
            if (b.has_res && !b.edge_after_res) x = b.res.forward(x, ctx);
        }
        skips.push_back(x);
        x = avg_pool2(x);
    }

    x = bottleneck_.forward(x, ctx);

    for (size_t j = 0; j < dec_.size(); ++j) {
        x = upsample2_trilinear(x);
        if (cfg_.skip_connections)
            x = concat_ch(std::vector<Var<T>>{x, skips[dec_.size() - 1 - j]});
        x = relu(dec_[j].res.forward(x, ctx));
    }
    return final_.forward(x);
}

template <class T>
DisplacementField NonRigidNet<T>::predict(const Tensor<T>& moving, const Tensor<T>& fixed) {
    auto f = forward_field(moving, fixed, TrainContext::eval());
    DisplacementField out;
    out.data = f.val().template cast<float>();
    return out;
}

template <class T>
void NonRigidNet<T>::collect(std::vector<TensorRef<T>>& out) {
    if (cfg_.variant == 4) {
        bank_m_.collect(out);
        bank_f_.collect(out);
    }
    stem_conv_.collect(out);
    stem_res_.collect(out);
    for (auto& b : enc_) {
        if (b.has_edge) b.edge.collect(out);
        if (b.has_dense) b.dense.collect(out);
        if (b.has_inception) b.inception.collect(out);
        if (b.has_res) b.res.collect(out);
    }
    bottleneck_.collect(out);
    for (auto& d : dec_) d.res.collect(out);
    final_.collect(out);
}

template <class T>
size_t NonRigidNet<T>::count_parameters() const {
    std::vector<TensorRef<T>> refs;
    const_cast<NonRigidNet<T>*>(this)->collect(refs);
    size_t n = 0;
    for (auto& r : refs)
        if (r.trainable) n += r.value->numel();
    return n;
}

template <class T>
std::array<int, 3> NonRigidNet<T>::receptive_field() const {
    const int r = receptive_field_1d(rf_);
    return {r, r, r};
}

template <class T>
EdgeKernelBank<T>* NonRigidNet<T>::block_bank(int level) {
    if (level < 0 || size_t(level) >= enc_.size() || !enc_[size_t(level)].has_edge)
        return nullptr;
    return &enc_[size_t(level)].edge;
}

template class NonRigidNet<float>;
template class NonRigidNet<double>;

} // namespace edgereg
