#include "edgereg/spatial.hpp"

#include <cmath>

namespace edgereg {

namespace {

using M3 = std::array<double, 9>;

M3 matmul3(const M3& a, const M3& b) {
    M3 c{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
            const double v = a[i * 3 + k];
            for (int j = 0; j < 3; ++j) c[i * 3 + j] += v * b[k * 3 + j];
        }
    return c;
}

void factors(const std::array<double, 12>& p, M3 f[5], M3 df[5]) {
    const double rx = p[3], ry = p[4], rz = p[5];
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    // A = Rz * Ry * Rx * Sh * S
    f[0] = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    df[0] = {-sz, -cz, 0, cz, -sz, 0, 0, 0, 0};
    f[1] = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    df[1] = {-sy, 0, cy, 0, 0, 0, -cy, 0, -sy};
    f[2] = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
    df[2] = {0, 0, 0, 0, -sx, -cx, 0, cx, -sx};
    f[3] = {1, p[9], p[10], 0, 1, p[11], 0, 0, 1};
    f[4] = {1 + p[6], 0, 0, 0, 1 + p[7], 0, 0, 0, 1 + p[8]};
    df[3] = df[4] = M3{}; // shear/scale factor derivatives are per-entry, handled separately
}

std::array<double, 16> embed(const M3& a, const double b[3]) {
    return {a[0], a[1], a[2], b[0], a[3], a[4], a[5], b[1], a[6], a[7], a[8], b[2], 0, 0, 0, 1};
}

M3 linear_of(const std::array<double, 16>& m) {
    return {m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
}

double det3(const M3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

} // namespace

std::array<double, 16> compose_affine(const std::array<double, 12>& params) {
    for (int i = 6; i < 9; ++i)
        require(params[i] > -1.0, "compose_affine: scale deviation <= -1 is degenerate");
    M3 f[5], df[5];
    factors(params, f, df);
    M3 a = matmul3(matmul3(matmul3(matmul3(f[0], f[1]), f[2]), f[3]), f[4]);
    const double b[3] = {params[0], params[1], params[2]};
    return embed(a, b);
}

std::array<std::array<double, 16>, 12> compose_affine_jacobian(const std::array<double, 12>& params) {
    M3 f[5], df[5];
    factors(params, f, df);
    // prefix[i] = f0..f_{i-1}, suffix[i] = f_{i+1}..f4
    M3 prefix[5], suffix[5];
    prefix[0] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int i = 1; i < 5; ++i) prefix[i] = matmul3(prefix[i - 1], f[i - 1]);
    suffix[4] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int i = 3; i >= 0; --i) suffix[i] = matmul3(f[i + 1], suffix[i + 1]);

    std::array<std::array<double, 16>, 12> out{};
    const double zero3[3] = {0, 0, 0};
    // translations
    for (int k = 0; k < 3; ++k) {
        out[k] = std::array<double, 16>{};
        out[k][k * 4 + 3] = 1.0;
        out[k][15] = 0.0;
    }
    // rotations: params 3,4,5 correspond to factors Rx=f[2], Ry=f[1], Rz=f[0]
    const int rot_factor[3] = {2, 1, 0};
    for (int k = 0; k < 3; ++k) {
        const int i = rot_factor[k];
        M3 d = matmul3(matmul3(prefix[i], df[i]), suffix[i]);
        out[3 + k] = embed(d, zero3);
        out[3 + k][15] = 0.0;
    }
    // scales: diag entries of f[4]
    for (int k = 0; k < 3; ++k) {
        M3 dS{};
        dS[k * 3 + k] = 1.0;
        M3 d = matmul3(matmul3(prefix[4], dS), suffix[4]);
        out[6 + k] = embed(d, zero3);
        out[6 + k][15] = 0.0;
    }
    // shears: entries (0,1), (0,2), (1,2) of f[3]
    const int sh_pos[3] = {1, 2, 5};
    for (int k = 0; k < 3; ++k) {
        M3 dSh{};
        dSh[sh_pos[k]] = 1.0;
        M3 d = matmul3(matmul3(prefix[3], dSh), suffix[3]);
        out[9 + k] = embed(d, zero3);
        out[9 + k][15] = 0.0;
    }
    for (auto& m : out) m[15] = 0.0;
    return out;
}

std::array<double, 16> invert_homogeneous(const std::array<double, 16>& m) {
    const M3 a = linear_of(m);
    const double d = det3(a);
    require(std::abs(d) > 1e-12, "invert: degenerate matrix");
    M3 inv;
    inv[0] = (a[4] * a[8] - a[5] * a[7]) / d;
    inv[1] = (a[2] * a[7] - a[1] * a[8]) / d;
    inv[2] = (a[1] * a[5] - a[2] * a[4]) / d;
    inv[3] = (a[5] * a[6] - a[3] * a[8]) / d;
    inv[4] = (a[0] * a[8] - a[2] * a[6]) / d;
    inv[5] = (a[2] * a[3] - a[0] * a[5]) / d;
    inv[6] = (a[3] * a[7] - a[4] * a[6]) / d;
    inv[7] = (a[1] * a[6] - a[0] * a[7]) / d;
    inv[8] = (a[0] * a[4] - a[1] * a[3]) / d;
    const double b[3] = {m[3], m[7], m[11]};
    const double nb[3] = {-(inv[0] * b[0] + inv[1] * b[1] + inv[2] * b[2]),
                          -(inv[3] * b[0] + inv[4] * b[1] + inv[5] * b[2]),
                          -(inv[6] * b[0] + inv[7] * b[1] + inv[8] * b[2])};
    return embed(inv, nb);
}

AffineTransform AffineTransform::from_params(const std::array<double, 12>& p) {
    AffineTransform t;
    t.params = p;
    t.matrix = compose_affine(p);
    return t;
}

double AffineTransform::det() const { return det3(linear_of(matrix)); }

std::array<double, 3> AffineTransform::apply(const std::array<double, 3>& p) const {
    std::array<double, 3> y;
    for (int r = 0; r < 3; ++r)
        y[r] = matrix[r * 4] * p[0] + matrix[r * 4 + 1] * p[1] + matrix[r * 4 + 2] * p[2] +
               matrix[r * 4 + 3];
    return y;
}

namespace {

// One trilinear tap: neighbours, weights, in-bounds flags for position s.
struct Tap {
    int i0[3], i1[3];
    double t[3];
    bool v0[3], v1[3];
};

inline Tap make_tap(double sx, double sy, double sz, int X, int Y, int Z) {
    Tap tp;
    const double s[3] = {sx, sy, sz};
    const int dims[3] = {X, Y, Z};
    for (int d = 0; d < 3; ++d) {
        const double fl = std::floor(s[d]);
        tp.i0[d] = int(fl);
        tp.i1[d] = tp.i0[d] + 1;
        tp.t[d] = s[d] - fl;
        tp.v0[d] = tp.i0[d] >= 0 && tp.i0[d] < dims[d];
        tp.v1[d] = tp.i1[d] >= 0 && tp.i1[d] < dims[d];
    }
    return tp;
}

// value and spatial derivative of the interpolant for one channel
template <class T>
inline void sample_tap(const T* ch, const Tap& tp, int X, int Y, double& val, double dpos[3]) {
    val = 0;
    dpos[0] = dpos[1] = dpos[2] = 0;
    for (int az = 0; az < 2; ++az) {
        const bool vz = az ? tp.v1[2] : tp.v0[2];
        if (!vz) continue;
        const int iz = az ? tp.i1[2] : tp.i0[2];
        const double wz = az ? tp.t[2] : 1 - tp.t[2];
        const double dz = az ? 1.0 : -1.0;
        for (int ay = 0; ay < 2; ++ay) {
            const bool vy = ay ? tp.v1[1] : tp.v0[1];
            if (!vy) continue;
            const int iy = ay ? tp.i1[1] : tp.i0[1];
            const double wy = ay ? tp.t[1] : 1 - tp.t[1];
            const double dy = ay ? 1.0 : -1.0;
            for (int ax = 0; ax < 2; ++ax) {
                const bool vx = ax ? tp.v1[0] : tp.v0[0];
                if (!vx) continue;
                const int ix = ax ? tp.i1[0] : tp.i0[0];
                const double wx = ax ? tp.t[0] : 1 - tp.t[0];
                const double dx = ax ? 1.0 : -1.0;
                const double v = double(ch[(size_t(iz) * Y + iy) * X + ix]);
                val += wx * wy * wz * v;
                dpos[0] += dx * wy * wz * v;
                dpos[1] += wx * dy * wz * v;
                dpos[2] += wx * wy * dz * v;
            }
        }
    }
}

// scatter g times the trilinear weights into the channel gradient
template <class T>
inline void scatter_tap(T* chg, const Tap& tp, int X, int Y, double g) {
    for (int az = 0; az < 2; ++az) {
        const bool vz = az ? tp.v1[2] : tp.v0[2];
        if (!vz) continue;
        const int iz = az ? tp.i1[2] : tp.i0[2];
        const double wz = az ? tp.t[2] : 1 - tp.t[2];
        for (int ay = 0; ay < 2; ++ay) {
            const bool vy = ay ? tp.v1[1] : tp.v0[1];
            if (!vy) continue;
            const int iy = ay ? tp.i1[1] : tp.i0[1];
            const double wy = ay ? tp.t[1] : 1 - tp.t[1];
            for (int ax = 0; ax < 2; ++ax) {
                const bool vx = ax ? tp.v1[0] : tp.v0[0];
                if (!vx) continue;
                const int ix = ax ? tp.i1[0] : tp.i0[0];
                const double wx = ax ? tp.t[0] : 1 - tp.t[0];
                chg[(size_t(iz) * Y + iy) * X + ix] += T(g * wx * wy * wz);
            }
        }
    }
}

} // namespace

template <class T>
Var<T> affine_warp_ad(const Var<T>& vol, const Var<T>& params) {
    const auto& s = vol.shape();
    require_shape(s.size() == 4, "affine_warp: volume must be (C,Z,Y,X)");
    require_shape(params.shape() == std::vector<int>{12}, "affine_warp: params must be a 12-vector");
    const int C = s[0], Z = s[1], Y = s[2], X = s[3];

    std::array<double, 12> p;
    for (int i = 0; i < 12; ++i) p[i] = double(params.val()[i]);
    const auto m = compose_affine(p);
    {
        AffineTransform t;
        t.matrix = m;
        require(std::abs(t.det()) >= 1e-8, "affine_warp: degenerate matrix");
    }
    const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0, cz = (Z - 1) / 2.0;

    Tensor<T> out(s);
    const T* vv = vol.val().data();
    T* ov = out.data();
    const size_t plane = size_t(Z) * Y * X;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                const double px = x - cx, py = y - cy, pz = z - cz;
                const double sx = m[0] * px + m[1] * py + m[2] * pz + m[3] + cx;
                const double sy = m[4] * px + m[5] * py + m[6] * pz + m[7] + cy;
                const double sz = m[8] * px + m[9] * py + m[10] * pz + m[11] + cz;
                const Tap tp = make_tap(sx, sy, sz, X, Y, Z);
                const size_t o = (size_t(z) * Y + y) * X + x;
                for (int c = 0; c < C; ++c) {
                    double val, dpos[3];
                    sample_tap(vv + c * plane, tp, X, Y, val, dpos);
                    ov[c * plane + o] = T(val);
                }
            }

    return make_op<T>(std::move(out), {vol.ptr(), params.ptr()},
                      [vp = vol.node(), pp = params.node(), p, m, C, Z, Y, X, cx, cy, cz,
                       plane](Node<T>* self) {
                          const T* g = self->grad.data();
                          const T* vv2 = vp->val.data();
                          const bool need_v = vp->requires_grad;
                          const bool need_p = pp->requires_grad;
                          T* vg = need_v ? vp->ensure_grad().data() : nullptr;
                          std::array<std::array<double, 16>, 12> jac{};
                          double pacc[12] = {0};
                          if (need_p) jac = compose_affine_jacobian(p);
                          for (int z = 0; z < Z; ++z)
                              for (int y = 0; y < Y; ++y)
                                  for (int x = 0; x < X; ++x) {
                                      const double px = x - cx, py = y - cy, pz = z - cz;
                                      const double sx = m[0] * px + m[1] * py + m[2] * pz + m[3] + cx;
                                      const double sy = m[4] * px + m[5] * py + m[6] * pz + m[7] + cy;
                                      const double sz = m[8] * px + m[9] * py + m[10] * pz + m[11] + cz;
                                      const Tap tp = make_tap(sx, sy, sz, X, Y, Z);
                                      const size_t o = (size_t(z) * Y + y) * X + x;
                                      double dsum[3] = {0, 0, 0};
                                      for (int c = 0; c < C; ++c) {
                                          const double gc = double(g[c * plane + o]);
                                          if (gc == 0) continue;
                                          if (need_v) scatter_tap(vg + c * plane, tp, X, Y, gc);
                                          if (need_p) {
                                              double val, dpos[3];
                                              sample_tap(vv2 + c * plane, tp, X, Y, val, dpos);
                                              dsum[0] += gc * dpos[0];
                                              dsum[1] += gc * dpos[1];
                                              dsum[2] += gc * dpos[2];
                                          }
                                      }
                                      if (need_p) {
                                          for (int k = 0; k < 12; ++k) {
                                              const auto& J = jac[k];
                                              const double dx2 = J[0] * px + J[1] * py + J[2] * pz + J[3];
                                              const double dy2 = J[4] * px + J[5] * py + J[6] * pz + J[7];
                                              const double dz2 = J[8] * px + J[9] * py + J[10] * pz + J[11];
                                              pacc[k] += dsum[0] * dx2 + dsum[1] * dy2 + dsum[2] * dz2;
                                          }
                                      }
                                  }
                          if (need_p) {
                              T* pg = pp->ensure_grad().data();
                              for (int k = 0; k < 12; ++k) pg[k] += T(pacc[k]);
                          }
                      });
}

template <class T>
Var<T> trilinear_warp_ad(const Var<T>& vol, const Var<T>& u) {
    const auto& s = vol.shape();
    const auto& us = u.shape();
    require_shape(s.size() == 4, "trilinear_warp: volume must be (C,Z,Y,X)");
    require_shape(us.size() == 4 && us[0] == 3, "trilinear_warp: field must be (3,Z,Y,X)");
    require_shape(us[1] == s[1] && us[2] == s[2] && us[3] == s[3],
                  "trilinear_warp: field dims must match volume dims");
    const int C = s[0], Z = s[1], Y = s[2], X = s[3];
    const size_t plane = size_t(Z) * Y * X;

    Tensor<T> out(s);
    const T* vv = vol.val().data();
    const T* uv = u.val().data();
    T* ov = out.data();
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                const size_t o = (size_t(z) * Y + y) * X + x;
                const Tap tp = make_tap(x + double(uv[o]), y + double(uv[plane + o]),
                                        z + double(uv[2 * plane + o]), X, Y, Z);
                for (int c = 0; c < C; ++c) {
                    double val, dpos[3];
                    sample_tap(vv + c * plane, tp, X, Y, val, dpos);
                    ov[c * plane + o] = T(val);
                }
            }

    return make_op<T>(std::move(out), {vol.ptr(), u.ptr()},
                      [vp = vol.node(), up = u.node(), C, Z, Y, X, plane](Node<T>* self) {
                          const T* g = self->grad.data();
                          const T* vv2 = vp->val.data();
                          const T* uv2 = up->val.data();
                          const bool need_v = vp->requires_grad;
                          const bool need_u = up->requires_grad;
                          T* vg = need_v ? vp->ensure_grad().data() : nullptr;
                          T* ug = need_u ? up->ensure_grad().data() : nullptr;
                          for (int z = 0; z < Z; ++z)
                              for (int y = 0; y < Y; ++y)
                                  for (int x = 0; x < X; ++x) {
                                      const size_t o = (size_t(z) * Y + y) * X + x;
                                      const Tap tp =
                                          make_tap(x + double(uv2[o]), y + double(uv2[plane + o]),
                                                   z + double(uv2[2 * plane + o]), X, Y, Z);
                                      double dsum[3] = {0, 0, 0};
                                      for (int c = 0; c < C; ++c) {
                                          const double gc = double(g[c * plane + o]);
                                          if (gc == 0) continue;
                                          if (need_v) scatter_tap(vg + c * plane, tp, X, Y, gc);
                                          if (need_u) {
                                              double val, dpos[3];
                                              sample_tap(vv2 + c * plane, tp, X, Y, val, dpos);
                                              dsum[0] += gc * dpos[0];
                                              dsum[1] += gc * dpos[1];
                                              dsum[2] += gc * dpos[2];
                                          }
                                      }
                                      if (need_u) {
                                          ug[o] += T(dsum[0]);
                                          ug[plane + o] += T(dsum[1]);
                                          ug[2 * plane + o] += T(dsum[2]);
                                      }
                                  }
                      });
}

template Var<float> affine_warp_ad<float>(const Var<float>&, const Var<float>&);
template Var<double> affine_warp_ad<double>(const Var<double>&, const Var<double>&);
template Var<float> trilinear_warp_ad<float>(const Var<float>&, const Var<float>&);
template Var<double> trilinear_warp_ad<double>(const Var<double>&, const Var<double>&);

Volume3D affine_warp(const Volume3D& vol, const AffineTransform& t) {
    require(std::abs(t.det()) >= 1e-8, "affine_warp: degenerate matrix");
    const int Z = vol.dz(), Y = vol.dy(), X = vol.dx();
    auto v = Var<double>::constant(vol.data.cast<double>().reshaped({1, Z, Y, X}));
    Tensor<double> p({12});
    for (int i = 0; i < 12; ++i) p[i] = t.params[i];
    auto out = affine_warp_ad(v, Var<double>::constant(p));
    Volume3D r;
    r.spacing = vol.spacing;
    r.data = out.val().reshaped({Z, Y, X}).template cast<float>();
    return r;
}

Volume3D trilinear_warp(const Volume3D& vol, const DisplacementField& u) {
    const int Z = vol.dz(), Y = vol.dy(), X = vol.dx();
    auto v = Var<double>::constant(vol.data.cast<double>().reshaped({1, Z, Y, X}));
    auto out = trilinear_warp_ad(v, Var<double>::constant(u.data.cast<double>()));
    Volume3D r;
    r.spacing = vol.spacing;
    r.data = out.val().reshaped({Z, Y, X}).template cast<float>();
    return r;
}

DisplacementField affine_to_field(const AffineTransform& t, int Z, int Y, int X) {
    DisplacementField f = DisplacementField::zeros(Z, Y, X);
    const auto& m = t.matrix;
    const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0, cz = (Z - 1) / 2.0;
    float* ux = f.data.data();
    float* uy = ux + size_t(Z) * Y * X;
    float* uz = uy + size_t(Z) * Y * X;
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double px = x - cx, py = y - cy, pz = z - cz;
                ux[o] = float(m[0] * px + m[1] * py + m[2] * pz + m[3] - px);
                uy[o] = float(m[4] * px + m[5] * py + m[6] * pz + m[7] - py);
                uz[o] = float(m[8] * px + m[9] * py + m[10] * pz + m[11] - pz);
            }
    return f;
}

namespace {
// trilinear sample of a (3,Z,Y,X) float field at an arbitrary position, zero outside
inline void sample_field3(const float* u, int Z, int Y, int X, double sx, double sy, double sz,
                          double out[3]) {
    const Tap tp = make_tap(sx, sy, sz, X, Y, Z);
    const size_t plane = size_t(Z) * Y * X;
    for (int c = 0; c < 3; ++c) {
        double val, dpos[3];
        sample_tap(u + c * plane, tp, X, Y, val, dpos);
        out[c] = val;
    }
}
} // namespace

DisplacementField compose_fields(const DisplacementField& u_outer, const DisplacementField& u_inner) {
    require_shape(u_outer.data.same_shape(u_inner.data), "compose_fields: dims mismatch");
    const int Z = u_outer.dz(), Y = u_outer.dy(), X = u_outer.dx();
    const size_t plane = size_t(Z) * Y * X;
    DisplacementField w = DisplacementField::zeros(Z, Y, X);
    const float* ui = u_inner.data.data();
    const float* uo = u_outer.data.data();
    float* wd = w.data.data();
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double ix = ui[o], iy = ui[plane + o], iz = ui[2 * plane + o];
                double outer[3];
                sample_field3(uo, Z, Y, X, x + ix, y + iy, z + iz, outer);
                wd[o] = float(ix + outer[0]);
                wd[plane + o] = float(iy + outer[1]);
                wd[2 * plane + o] = float(iz + outer[2]);
            }
    return w;
}

LabelVolume warp_labels(const LabelVolume& labels, const DisplacementField& u) {
    require_shape(labels.dz() == u.dz() && labels.dy() == u.dy() && labels.dx() == u.dx(),
                  "warp_labels: dims mismatch");
    const int Z = labels.dz(), Y = labels.dy(), X = labels.dx();
    const size_t plane = size_t(Z) * Y * X;
    LabelVolume out;
    out.spacing = labels.spacing;
    out.data = Tensor<uint8_t>({Z, Y, X});
    const float* ud = u.data.data();
    const uint8_t* ld = labels.data.data();
    uint8_t* od = out.data.data();
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const int qx = int(std::floor(x + double(ud[o]) + 0.5));
                const int qy = int(std::floor(y + double(ud[plane + o]) + 0.5));
                const int qz = int(std::floor(z + double(ud[2 * plane + o]) + 0.5));
                od[o] = (qx >= 0 && qx < X && qy >= 0 && qy < Y && qz >= 0 && qz < Z)
                            ? ld[(size_t(qz) * Y + qy) * X + qx]
                            : 0;
            }
    return out;
}

LabelVolume warp_labels(const LabelVolume& labels, const AffineTransform& t) {
    const int Z = labels.dz(), Y = labels.dy(), X = labels.dx();
    const auto& m = t.matrix;
    const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0, cz = (Z - 1) / 2.0;
    LabelVolume out;
    out.spacing = labels.spacing;
    out.data = Tensor<uint8_t>({Z, Y, X});
    const uint8_t* ld = labels.data.data();
    uint8_t* od = out.data.data();
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double px = x - cx, py = y - cy, pz = z - cz;
                const double sx = m[0] * px + m[1] * py + m[2] * pz + m[3] + cx;
                const double sy = m[4] * px + m[5] * py + m[6] * pz + m[7] + cy;
                const double sz = m[8] * px + m[9] * py + m[10] * pz + m[11] + cz;
                const int qx = int(std::floor(sx + 0.5));
                const int qy = int(std::floor(sy + 0.5));
                const int qz = int(std::floor(sz + 0.5));
                od[o] = (qx >= 0 && qx < X && qy >= 0 && qy < Y && qz >= 0 && qz < Z)
                            ? ld[(size_t(qz) * Y + qy) * X + qx]
                            : 0;
            }
    return out;
}

} // namespace edgereg
