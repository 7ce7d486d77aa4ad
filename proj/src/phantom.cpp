#include "edgereg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "edgereg/rng.hpp"

namespace edgereg {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct Scene {
    // nested ellipsoid semi-axes (x,y,z) in voxels: mask (label 1), GM shell
    // (label 3), WM core (label 2)
    double mask[3], gm[3], wm[3];
    double phase[3];   // texture phases
    double lambda[3] = {9.0, 11.0, 13.0}; // texture wavelengths in voxels

    static Scene make(double R, RNG& rng) {
        Scene s;
        const double mask_f[3] = {0.66, 0.60, 0.53};
        const double gm_f[3] = {0.48, 0.44, 0.39};
        const double wm_f[3] = {0.31, 0.27, 0.23};
        for (int d = 0; d < 3; ++d) {
            s.mask[d] = mask_f[d] * R;
            s.gm[d] = gm_f[d] * R;
            s.wm[d] = wm_f[d] * R;
        }
        for (int d = 0; d < 3; ++d) s.phase[d] = rng.uniform(0.0, kTau);
        return s;
    }

    static double rho(const double c[3], const double ax[3]) {
        double s = 0;
        for (int d = 0; d < 3; ++d) {
            const double r = c[d] / ax[d];
            s += r * r;
        }
        return std::sqrt(s);
    }

    // smoothstep shell indicator: 0.5 on the ellipsoid surface, ~1.5 voxel wide
    static double shell(double rho, const double ax[3]) {
        const double mean_ax = (ax[0] + ax[1] + ax[2]) / 3.0;
        double t = (1.0 - rho) * mean_ax / 1.5 + 0.5;
        if (t <= 0) return 0;
        if (t >= 1) return 1;
        return t * t * (3 - 2 * t);
    }

    double intensity(const double c[3]) const {
        const double s1 = shell(rho(c, mask), mask);
        const double s3 = shell(rho(c, gm), gm);
        const double s2 = shell(rho(c, wm), wm);
        const double tex = 0.05 * std::cos(kTau * c[0] / lambda[0] + phase[0]) *
                           std::cos(kTau * c[1] / lambda[1] + phase[1]) *
                           std::cos(kTau * c[2] / lambda[2] + phase[2]);
        return (0.35 + tex) * s1 + 0.20 * s3 + 0.30 * s2;
    }

    uint8_t label(const double c[3]) const {
        if (rho(c, wm) <= 1.0) return 2;
        if (rho(c, gm) <= 1.0) return 3;
        if (rho(c, mask) <= 1.0) return 1;
        return 0;
    }
};

// separable Gaussian smoothing along one axis, sigma in voxels
void smooth_axis(Tensor<float>& t, int axis, double sigma) {
    const int Z = t.dim(0), Y = t.dim(1), X = t.dim(2);
    const int radius = int(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    Tensor<float> out({Z, Y, X});
    const int dims[3] = {Z, Y, X};
    const int n = dims[axis];
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x) {
                int idx[3] = {z, y, x};
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    int j = idx[axis] + i;
                    if (j < 0) j = 0;
                    if (j >= n) j = n - 1;
                    int q[3] = {idx[0], idx[1], idx[2]};
                    q[axis] = j;
                    acc += k[i + radius] * t.at(q[0], q[1], q[2]);
                }
                out.at(z, y, x) = float(acc);
            }
    t = out;
}

// trilinear sample of one field channel at index-space position, border clamp
double sample_clamped(const float* ch, int Z, int Y, int X, double sx, double sy, double sz) {
    sx = std::min(std::max(sx, 0.0), double(X - 1));
    sy = std::min(std::max(sy, 0.0), double(Y - 1));
    sz = std::min(std::max(sz, 0.0), double(Z - 1));
    const int x0 = std::min(int(sx), X - 2 >= 0 ? X - 2 : 0), y0 = std::min(int(sy), Y - 2 >= 0 ? Y - 2 : 0),
              z0 = std::min(int(sz), Z - 2 >= 0 ? Z - 2 : 0);
    const double tx = sx - x0, ty = sy - y0, tz = sz - z0;
    double acc = 0;
    for (int az = 0; az < 2; ++az)
        for (int ay = 0; ay < 2; ++ay)
            for (int ax = 0; ax < 2; ++ax) {
                const double w = (az ? tz : 1 - tz) * (ay ? ty : 1 - ty) * (ax ? tx : 1 - tx);
                acc += w * ch[(size_t(std::min(z0 + az, Z - 1)) * Y + std::min(y0 + ay, Y - 1)) * X +
                              std::min(x0 + ax, X - 1)];
            }
    return acc;
}

} // namespace

PhantomPair generate_phantom(uint64_t seed, int dx, int dy, int dz, const PhantomControls& c) {
    require(dx >= 16 && dy >= 16 && dz >= 16, "generate_phantom: dims must each be >= 16");
    require(c.translation >= 0 && c.rotation_deg >= 0 && c.scale >= 0 && c.shear >= 0 && c.disp >= 0,
            "generate_phantom: magnitudes must be >= 0");
    RNG rng(seed);

    std::array<double, 12> p{};
    for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-c.translation, c.translation);
    for (int i = 3; i < 6; ++i) p[i] = rng.uniform(-c.rotation_deg, c.rotation_deg) * kTau / 360.0;
    for (int i = 6; i < 9; ++i) p[i] = rng.uniform(-c.scale, c.scale);
    for (int i = 9; i < 12; ++i) p[i] = rng.uniform(-c.shear, c.shear);
    const AffineTransform gt = AffineTransform::from_params(p);
    const auto inv = invert_homogeneous(gt.matrix);

    const int Z = dz, Y = dy, X = dx;
    const double R = std::min(std::min(dx, dy), dz) / 2.0;
    const Scene scene = Scene::make(R, rng);

    DisplacementField disp = DisplacementField::zeros(Z, Y, X);
    if (c.disp > 0) {
        for (auto& v : disp.data) v = float(rng.normal());
        for (int ch = 0; ch < 3; ++ch) {
            Tensor<float> chan({Z, Y, X});
            std::copy(disp.data.begin() + size_t(ch) * Z * Y * X,
                      disp.data.begin() + size_t(ch + 1) * Z * Y * X, chan.begin());
            for (int ax = 0; ax < 3; ++ax) smooth_axis(chan, ax, 4.0);
            std::copy(chan.begin(), chan.end(), disp.data.begin() + size_t(ch) * Z * Y * X);
        }
        const size_t plane = size_t(Z) * Y * X;
        double mx = 0;
        for (size_t i = 0; i < plane; ++i) {
            const double m2 = double(disp.data[i]) * disp.data[i] +
                              double(disp.data[plane + i]) * disp.data[plane + i] +
                              double(disp.data[2 * plane + i]) * disp.data[2 * plane + i];
            mx = std::max(mx, m2);
        }
        if (mx > 0) {
            const float s = float(c.disp / std::sqrt(mx));
            for (auto& v : disp.data) v *= s;
        }
    }

    const double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0, cz = (Z - 1) / 2.0;
    const size_t plane = size_t(Z) * Y * X;
    const float* ux = disp.data.data();
    const float* uy = ux + plane;
    const float* uz = uy + plane;

    PhantomPair pair;
    pair.gt_affine = gt;
    pair.gt_disp = disp;
    pair.modality_remap = c.modality_shift ? "v -> 1 - v^0.7" : "none";
    pair.fixed.data = Tensor<float>({Z, Y, X});
    pair.moving.data = Tensor<float>({Z, Y, X});
    pair.fixed_labels.data = Tensor<uint8_t>({Z, Y, X});
    pair.moving_labels.data = Tensor<uint8_t>({Z, Y, X});

    // fixed scene on the grid
    size_t o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double cc[3] = {x - cx, y - cy, z - cz};
                pair.fixed.data[o] = float(scene.intensity(cc));
                pair.fixed_labels.data[o] = scene.label(cc);
            }

    // moving(q) = scene(S(q)) with S = (Id + u)^{-1} . A^{-1}; labels pulled
    // from the fixed grid with the same nearest-neighbour convention used by
    // warp_labels so the ground-truth round trip loses only discretization.
    o = 0;
    for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
            for (int x = 0; x < X; ++x, ++o) {
                const double q[3] = {x - cx, y - cy, z - cz};
                double r[3];
                for (int i = 0; i < 3; ++i)
                    r[i] = inv[i * 4] * q[0] + inv[i * 4 + 1] * q[1] + inv[i * 4 + 2] * q[2] +
                           inv[i * 4 + 3];
                double s[3] = {r[0], r[1], r[2]};
                if (c.disp > 0) {
                    for (int it = 0; it < 30; ++it) {
                        const double ix = s[0] + cx, iy = s[1] + cy, iz = s[2] + cz;
                        const double vx = sample_clamped(ux, Z, Y, X, ix, iy, iz);
                        const double vy = sample_clamped(uy, Z, Y, X, ix, iy, iz);
                        const double vz = sample_clamped(uz, Z, Y, X, ix, iy, iz);
                        const double nx = r[0] - vx, ny = r[1] - vy, nz = r[2] - vz;
                        const double step = std::abs(nx - s[0]) + std::abs(ny - s[1]) + std::abs(nz - s[2]);
                        s[0] = nx;
                        s[1] = ny;
                        s[2] = nz;
                        if (step < 1e-9) break;
                    }
                }
                double v = scene.intensity(s);
                if (c.modality_shift) v = 1.0 - std::pow(std::max(v, 0.0), 0.7);
                pair.moving.data[o] = float(std::min(std::max(v, 0.0), 1.0));
                const int qx = int(std::floor(s[0] + cx + 0.5));
                const int qy = int(std::floor(s[1] + cy + 0.5));
                const int qz = int(std::floor(s[2] + cz + 0.5));
                pair.moving_labels.data[o] =
                    (qx >= 0 && qx < X && qy >= 0 && qy < Y && qz >= 0 && qz < Z)
                        ? pair.fixed_labels.data[(size_t(qz) * Y + qy) * X + qx]
                        : 0;
            }

    return pair;
}

PhantomPair generate_phantom_pair(uint64_t seed, int dx, int dy, int dz, double affine_magnitude,
                                  double disp_magnitude, bool modality_shift) {
    require(affine_magnitude >= 0 && disp_magnitude >= 0,
            "generate_phantom_pair: magnitudes must be >= 0");
    PhantomControls c;
    c.translation = affine_magnitude;
    c.rotation_deg = affine_magnitude;
    c.scale = 0.01 * affine_magnitude;
    c.shear = 0.01 * affine_magnitude;
    c.disp = disp_magnitude;
    c.modality_shift = modality_shift;
    return generate_phantom(seed, dx, dy, dz, c);
}

} // namespace edgereg
