#include "edgereg/losses.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "edgereg/gemm.hpp"

namespace edgereg {

namespace {

void validate(const LossConfig& cfg) {
    require(cfg.bins >= 2, "loss config: bins must be >= 2");
    require(cfg.window == 0 || (cfg.window >= 3 && cfg.window % 2 == 1),
            "loss config: window must be 0 or odd >= 3");
    require(cfg.parzen_sigma > 0, "loss config: parzen_sigma must be > 0");
    require(cfg.alpha >= 0 && cfg.alpha_affine >= 0, "loss config: alpha must be >= 0");
}

// normalized Gaussian soft-assignment weights over bin centers (k+0.5)/B
template <class T>
void parzen_row(T v, int B, T inv2s2, T* w) {
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    T sum = 0;
    for (int k = 0; k < B; ++k) {
        const T d = v - T(k + 0.5) / T(B);
        w[k] = std::exp(-d * d * inv2s2);
        sum += w[k];
    }
    const T inv = T(1) / sum;
    for (int k = 0; k < B; ++k) w[k] *= inv;
}

// batched parzen_row: one n x B row-major weight matrix for n intensities
template <class T>
void parzen_fill(const T* v, size_t n, int B, T inv2s2, T* out) {
    for (size_t i = 0; i < n; ++i) parzen_row(v[i], B, inv2s2, out + i * size_t(B));
}

struct MIBlock {
    int z0, y0, x0, z1, y1, x1; // [z0,z1) x [y0,y1) x [x0,x1)
    size_t row0 = 0;            // first row in the cached weight matrices
    std::vector<double> P;      // joint probabilities, bins x bins
};

double safe_log_ratio(double num, double den) {
    if (num <= 0 || den <= 0) return 0;
    return std::log(num / den);
}

} // namespace

template <class T>
Var<T> smoothness_ad(const Var<T>& u, const LossConfig& cfg) {
    validate(cfg);
    const auto& s = u.shape();
    require_shape(s.size() == 4 && s[0] == 3, "smoothness: field must be (3,Z,Y,X)");
    const int Z = s[1], Y = s[2], X = s[3];
    const size_t sz = size_t(Y) * X, sy = X;
    const size_t chan = size_t(Z) * Y * X;
    const double denom = cfg.reduction == Reduction::mean ? double(Z) * Y * X : 1.0;

    const T* ud = u.val().data();
    double acc = 0;
    for (int c = 0; c < 3; ++c) {
        const T* base = ud + c * chan;
        for (int z = 0; z < Z; ++z)
            for (int y = 0; y < Y; ++y)
                for (int x = 0; x < X; ++x) {
                    const size_t p = size_t(z) * sz + size_t(y) * sy + x;
                    const double v = base[p];
                    if (x + 1 < X) { const double d = base[p + 1] - v; acc += d * d; }
                    if (y + 1 < Y) { const double d = base[p + sy] - v; acc += d * d; }
                    if (z + 1 < Z) { const double d = base[p + sz] - v; acc += d * d; }
                }
    }
    Tensor<T> out({1});
    out[0] = T(acc / denom);
    return make_op<T>(std::move(out), {u.ptr()}, [up = u.node(), Z, Y, X, sz, sy, chan, denom](Node<T>* self) {
        if (!up->requires_grad) return;
        const T k = T(2) * self->grad[0] / T(denom);
        const T* ud2 = up->val.data();
        T* gd = up->ensure_grad().data();
        for (int c = 0; c < 3; ++c) {
            const T* base = ud2 + c * chan;
            T* gbase = gd + c * chan;
            for (int z = 0; z < Z; ++z)
                for (int y = 0; y < Y; ++y)
                    for (int x = 0; x < X; ++x) {
                        const size_t p = size_t(z) * sz + size_t(y) * sy + x;
                        const T v = base[p];
                        if (x + 1 < X) {
                            const T d = k * (base[p + 1] - v);
                            gbase[p + 1] += d;
                            gbase[p] -= d;
                        }
                        if (y + 1 < Y) {
                            const T d = k * (base[p + sy] - v);
                            gbase[p + sy] += d;
                            gbase[p] -= d;
                        }
                        if (z + 1 < Z) {
                            const T d = k * (base[p + sz] - v);
                            gbase[p + sz] += d;
                            gbase[p] -= d;
                        }
                    }
        }
    });
}

template <class T>
Var<T> local_mi_ad(const Var<T>& f, const Var<T>& w, const LossConfig& cfg) {
    validate(cfg);
    const auto& fs = f.shape();
    require_shape(f.val().same_shape(w.val()), "local_mi: shape mismatch " + f.val().shape_str() +
                                                   " vs " + w.val().shape_str());
    require_shape(fs.size() == 3 || (fs.size() == 4 && fs[0] == 1),
                  "local_mi: volumes must be (Z,Y,X) or (1,Z,Y,X)");
    const int Z = fs[fs.size() - 3], Y = fs[fs.size() - 2], X = fs[fs.size() - 1];
    const int B = cfg.bins;
    const T sigma = T(cfg.parzen_sigma) / T(B);
    const T inv2s2 = T(1) / (T(2) * sigma * sigma);

    const T* fd = f.val().data();
    const T* wd = w.val().data();
    const size_t n_total = f.val().numel();
    const T lo = T(-1e-4), hi = T(1) + T(1e-4);
    bool in_range = true;
    for (size_t i = 0; i < n_total; ++i)
        in_range = in_range && fd[i] >= lo && fd[i] <= hi && wd[i] >= lo && wd[i] <= hi;
    require(in_range, "local_mi: intensities must lie in [0,1]");

    const int win = cfg.window == 0 ? std::max(std::max(Z, Y), X) : cfg.window;
    auto blocks = std::make_shared<std::vector<MIBlock>>();
    for (int z0 = 0; z0 < Z; z0 += win)
        for (int y0 = 0; y0 < Y; y0 += win)
            for (int x0 = 0; x0 < X; x0 += win)
                blocks->push_back({z0, y0, x0, std::min(z0 + win, Z), std::min(y0 + win, Y),
                                   std::min(x0 + win, X), 0, {}});

    // Per-voxel soft-assignment rows, in block traversal order; retained for
    // the backward pass, which would otherwise redo every exp.
    auto rows_f = std::make_shared<std::vector<T>>(n_total * size_t(B));
    auto rows_w = std::make_shared<std::vector<T>>(n_total * size_t(B));
    std::vector<T> vals_f, vals_w;
    std::vector<double> Fd, Wd;
    double loss_sum = 0;
    size_t row = 0;
    for (auto& b : *blocks) {
        b.row0 = row;
        const size_t n = size_t(b.z1 - b.z0) * (b.y1 - b.y0) * (b.x1 - b.x0);
        vals_f.resize(n);
        vals_w.resize(n);
        size_t i = 0;
        for (int z = b.z0; z < b.z1; ++z)
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x, ++i) {
                    const size_t p = (size_t(z) * Y + y) * X + x;
                    vals_f[i] = fd[p];
                    vals_w[i] = wd[p];
                }
        T* Fb = rows_f->data() + row * size_t(B);
        T* Wb = rows_w->data() + row * size_t(B);
        parzen_fill(vals_f.data(), n, B, inv2s2, Fb);
        parzen_fill(vals_w.data(), n, B, inv2s2, Wb);
        row += n;

        // joint histogram P = F^T W / n, accumulated in double
        Fd.assign(Fb, Fb + n * size_t(B));
        Wd.assign(Wb, Wb + n * size_t(B));
        b.P.assign(size_t(B) * B, 0.0);
        gemm(true, false, B, B, int(n), 1.0 / double(n), Fd.data(), B, Wd.data(), B, 0.0,
             b.P.data(), B);

        std::vector<double> pk(B, 0), ql(B, 0);
        for (int k = 0; k < B; ++k)
            for (int l = 0; l < B; ++l) {
                pk[k] += b.P[size_t(k) * B + l];
                ql[l] += b.P[size_t(k) * B + l];
            }
        double mi = 0;
        for (int k = 0; k < B; ++k)
            for (int l = 0; l < B; ++l) {
                const double pj = b.P[size_t(k) * B + l];
                if (pj > 0) mi += pj * safe_log_ratio(pj, pk[k] * ql[l]);
            }
        loss_sum -= mi;
    }
    const double scale_out = cfg.reduction == Reduction::mean ? 1.0 / double(blocks->size()) : 1.0;
    Tensor<T> out({1});
    out[0] = T(loss_sum * scale_out);

    return make_op<T>(
        std::move(out), {f.ptr(), w.ptr()},
        [fp = f.node(), wp = w.node(), blocks, rows_f, rows_w, B, inv2s2, scale_out, Y,
         X](Node<T>* self) {
            const bool need_f = fp->requires_grad;
            const bool need_w = wp->requires_grad;
            if (!need_f && !need_w) return;
            const T g = self->grad[0];
            T* fg = need_f ? fp->ensure_grad().data() : nullptr;
            T* wg = need_w ? wp->ensure_grad().data() : nullptr;
            std::vector<T> centers(static_cast<size_t>(B));
            for (int l = 0; l < B; ++l) centers[size_t(l)] = T(l + 0.5) / T(B);
            std::vector<double> pk(static_cast<size_t>(B)), ql(static_cast<size_t>(B));
            std::vector<T> Gt(size_t(B) * B), Aw, Af;
            for (const auto& b : *blocks) {
                const size_t n = size_t(b.z1 - b.z0) * (b.y1 - b.y0) * (b.x1 - b.x0);
                const T* Fb = rows_f->data() + b.row0 * size_t(B);
                const T* Wb = rows_w->data() + b.row0 * size_t(B);
                std::fill(pk.begin(), pk.end(), 0.0);
                std::fill(ql.begin(), ql.end(), 0.0);
                for (int k = 0; k < B; ++k)
                    for (int l = 0; l < B; ++l) {
                        pk[size_t(k)] += b.P[size_t(k) * B + l];
                        ql[size_t(l)] += b.P[size_t(k) * B + l];
                    }
                // d(-MI)/dw_s needs log(P_kl/q_l); the p_k and constant terms
                // cancel because the weight derivatives sum to zero over bins.
                // Per voxel i: acc = wf_i^T G cw_i, batched as A = F G.
                if (need_w) {
                    for (int k = 0; k < B; ++k)
                        for (int l = 0; l < B; ++l)
                            Gt[size_t(k) * B + l] =
                                T(safe_log_ratio(b.P[size_t(k) * B + l], ql[size_t(l)]));
                    Aw.resize(n * size_t(B));
                    gemm(false, false, int(n), B, B, T(1), Fb, B, Gt.data(), B, T(0), Aw.data(),
                         B);
                }
                if (need_f) {
                    for (int k = 0; k < B; ++k)
                        for (int l = 0; l < B; ++l)
                            Gt[size_t(k) * B + l] =
                                T(safe_log_ratio(b.P[size_t(k) * B + l], pk[size_t(k)]));
                    Af.resize(n * size_t(B));
                    gemm(false, true, int(n), B, B, T(1), Wb, B, Gt.data(), B, T(0), Af.data(),
                         B);
                }
                const T factor = -g * T(scale_out) / T(double(n)) * T(2) * inv2s2;
                size_t i = 0;
                for (int z = b.z0; z < b.z1; ++z)
                    for (int y = b.y0; y < b.y1; ++y)
                        for (int x = b.x0; x < b.x1; ++x, ++i) {
                            const size_t p = (size_t(z) * Y + y) * X + x;
                            if (need_w) {
                                const T* wwr = Wb + i * size_t(B);
                                const T* ar = Aw.data() + i * size_t(B);
                                T cbar = 0;
                                for (int l = 0; l < B; ++l) cbar += wwr[l] * centers[size_t(l)];
                                T acc = 0;
                                for (int l = 0; l < B; ++l)
                                    acc += ar[l] * wwr[l] * (centers[size_t(l)] - cbar);
                                wg[p] += factor * acc;
                            }
                            if (need_f) {
                                const T* wfr = Fb + i * size_t(B);
                                const T* ar = Af.data() + i * size_t(B);
                                T cbar = 0;
                                for (int k = 0; k < B; ++k) cbar += wfr[k] * centers[size_t(k)];
                                T acc = 0;
                                for (int k = 0; k < B; ++k)
                                    acc += ar[k] * wfr[k] * (centers[size_t(k)] - cbar);
                                fg[p] += factor * acc;
                            }
                        }
            }
        });
}

template <class T>
Var<T> affine_to_field_ad(const Var<T>& params, int Z, int Y, int X) {
    require_shape(params.shape() == std::vector<int>{12}, "affine_to_field: params must be a 12-vector");
    std::array<double, 12> p;
    for (int i = 0; i < 12; ++i) p[i] = double(params.val()[i]);
    const auto m = compose_affine(p);
    const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0, cz = (Z - 1) / 2.0;
    Tensor<T> out({3, Z, Y, X});
    const size_t chan = size_t(Z) * Y * X;
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double c[3] = {x - cx, y - cy, z - cz};
                for (int i = 0; i < 3; ++i)
                    out[i * chan + o] = T(m[i * 4] * c[0] + m[i * 4 + 1] * c[1] + m[i * 4 + 2] * c[2] +
                                          m[i * 4 + 3] - c[i]);
            }
    return make_op<T>(std::move(out), {params.ptr()}, [pp = params.node(), p, Z, Y, X, cx, cy, cz,
                                                       chan](Node<T>* self) {
        if (!pp->requires_grad) return;
        // contract the voxel grads to first moments, then through d(matrix)/d(param)
        double M[3][4] = {};
        const T* g = self->grad.data();
        size_t o2 = 0;
        for (int z = 0; z < Z; ++z)
            for (int y = 0; y < Y; ++y)
                for (int x = 0; x < X; ++x, ++o2) {
                    const double c[3] = {x - cx, y - cy, z - cz};
                    for (int i = 0; i < 3; ++i) {
                        const double gi = double(g[i * chan + o2]);
                        M[i][0] += gi * c[0];
                        M[i][1] += gi * c[1];
                        M[i][2] += gi * c[2];
                        M[i][3] += gi;
                    }
                }
        const auto J = compose_affine_jacobian(p);
        T* pg = pp->ensure_grad().data();
        for (int k = 0; k < 12; ++k) {
            double acc = 0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 4; ++j) acc += J[k][i * 4 + j] * M[i][j];
            pg[k] += T(acc);
        }
    });
}

template <class T>
Var<T> total_loss_affine(const Var<T>& fixed, const Var<T>& moving, const Var<T>& params,
                         const LossConfig& cfg, LossBreakdown* bd) {
    validate(cfg);
    const auto& s = fixed.shape();
    require_shape(s.size() == 4, "total_loss: volumes must be (C,Z,Y,X)");
    const int Z = s[1], Y = s[2], X = s[3];
    Var<T> warped = affine_warp_ad(moving, params);
    Var<T> D = local_mi_ad(fixed, warped, cfg);
    Var<T> total = D;
    double Rv;
    if (cfg.alpha_affine > 0) {
        Var<T> field = affine_to_field_ad(params, Z, Y, X);
        Var<T> R = smoothness_ad(field, cfg);
        Rv = double(R.item());
        total = add(D, scale(R, T(cfg.alpha_affine)));
    } else {
        std::array<double, 12> p;
        for (int i = 0; i < 12; ++i) p[i] = double(params.val()[i]);
        Rv = smoothness(affine_to_field(AffineTransform::from_params(p), Z, Y, X), cfg);
    }
    if (bd) {
        bd->D = double(D.item());
        bd->R = Rv;
        bd->alpha = cfg.alpha_affine;
        bd->total = double(total.item());
    }
    return total;
}

template <class T>
Var<T> total_loss_field(const Var<T>& fixed, const Var<T>& moving, const Var<T>& u,
                        const LossConfig& cfg, LossBreakdown* bd) {
    validate(cfg);
    Var<T> warped = trilinear_warp_ad(moving, u);
    Var<T> D = local_mi_ad(fixed, warped, cfg);
    Var<T> R = smoothness_ad(u, cfg);
    Var<T> total = cfg.alpha > 0 ? add(D, scale(R, T(cfg.alpha))) : D;
    if (bd) {
        bd->D = double(D.item());
        bd->R = double(R.item());
        bd->alpha = cfg.alpha;
        bd->total = double(total.item());
    }
    return total;
}

double smoothness(const DisplacementField& u, const LossConfig& cfg) {
    auto v = Var<double>::constant(u.data.cast<double>());
    return smoothness_ad(v, cfg).item();
}

double local_mi_loss(const Volume3D& f, const Volume3D& w, const LossConfig& cfg) {
    auto fv = Var<double>::constant(f.data.cast<double>());
    auto wv = Var<double>::constant(w.data.cast<double>());
    return local_mi_ad(fv, wv, cfg).item();
}

LossBreakdown total_loss(const Volume3D& f, const Volume3D& m, const AffineTransform& t,
                         const LossConfig& cfg) {
    require_shape(f.data.same_shape(m.data), "total_loss: volume dims mismatch");
    LossBreakdown bd;
    bd.D = local_mi_loss(f, affine_warp(m, t), cfg);
    bd.R = smoothness(affine_to_field(t, f.dz(), f.dy(), f.dx()), cfg);
    bd.alpha = cfg.alpha_affine;
    bd.total = bd.D + bd.alpha * bd.R;
    return bd;
}

LossBreakdown total_loss(const Volume3D& f, const Volume3D& m, const DisplacementField& u,
                         const LossConfig& cfg) {
    require_shape(f.data.same_shape(m.data), "total_loss: volume dims mismatch");
    require_shape(u.dz() == f.dz() && u.dy() == f.dy() && u.dx() == f.dx(),
                  "total_loss: field dims mismatch");
    LossBreakdown bd;
    bd.D = local_mi_loss(f, trilinear_warp(m, u), cfg);
    bd.R = smoothness(u, cfg);
    bd.alpha = cfg.alpha;
    bd.total = bd.D + bd.alpha * bd.R;
    return bd;
}

#define EDGEREG_LOSSES_INSTANTIATE(T)                                                              \
    template Var<T> smoothness_ad<T>(const Var<T>&, const LossConfig&);                            \
    template Var<T> local_mi_ad<T>(const Var<T>&, const Var<T>&, const LossConfig&);               \
    template Var<T> affine_to_field_ad<T>(const Var<T>&, int, int, int);                           \
    template Var<T> total_loss_affine<T>(const Var<T>&, const Var<T>&, const Var<T>&,              \
                                         const LossConfig&, LossBreakdown*);                       \
    template Var<T> total_loss_field<T>(const Var<T>&, const Var<T>&, const Var<T>&,               \
                                        const LossConfig&, LossBreakdown*);

EDGEREG_LOSSES_INSTANTIATE(float)
EDGEREG_LOSSES_INSTANTIATE(double)

} // namespace edgereg
