#pragma once

#include <array>

#include "edgereg/autodiff.hpp"
#include "edgereg/volume.hpp"

namespace edgereg {

// 12-DOF affine map y = A x + b in center-origin voxel coordinates.
// params = (t1,t2,t3, rx,ry,rz, s1,s2,s3, h1,h2,h3): translations in voxels,
// rotations in radians (right-handed), scales stored as deviations (scale =
// 1 + s), shears filling the upper triangle. A = Rz * Ry * Rx * Sh * S.
struct AffineTransform {
    std::array<double, 12> params{};
    std::array<double, 16> matrix{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static AffineTransform identity() { return AffineTransform{}; }
    static AffineTransform from_params(const std::array<double, 12>& p);

    // 3x3 linear part determinant
    double det() const;
    // applies the map to a center-origin point (x,y,z)
    std::array<double, 3> apply(const std::array<double, 3>& p) const;
};

// matrix for a parameter vector; throws on scale deviation <= -1
std::array<double, 16> compose_affine(const std::array<double, 12>& params);
// analytic Jacobian: out[k] = d(matrix)/d(params[k]), each a 4x4
std::array<std::array<double, 16>, 12> compose_affine_jacobian(const std::array<double, 12>& params);
// inverse of a homogeneous matrix with last row (0,0,0,1)
std::array<double, 16> invert_homogeneous(const std::array<double, 16>& m);

// ---- differentiable warps on (C,Z,Y,X) tensors ----

// Backward affine warp: output(p) = vol(A c(p) + b + center), trilinear,
// zero outside. params is the 12-vector Var; differentiable w.r.t. both.
template <class T>
Var<T> affine_warp_ad(const Var<T>& vol, const Var<T>& params);

// Backward dense warp per the displacement convention phi(p) = p + u(p),
// u as (3,Z,Y,X) with channels (x,y,z); zero outside.
template <class T>
Var<T> trilinear_warp_ad(const Var<T>& vol, const Var<T>& u);

// ---- plain (non-differentiable) conveniences ----
Volume3D affine_warp(const Volume3D& vol, const AffineTransform& t);
Volume3D trilinear_warp(const Volume3D& vol, const DisplacementField& u);
DisplacementField affine_to_field(const AffineTransform& t, int Z, int Y, int X);

// w such that warp(warp(vol, u_outer), u_inner) ~= warp(vol, w):
// w(p) = u_inner(p) + u_outer(p + u_inner(p)), u_outer sampled trilinearly
// with zero fill outside.
DisplacementField compose_fields(const DisplacementField& u_outer, const DisplacementField& u_inner);

// Nearest-neighbour label resampling under the same backward-warp convention.
LabelVolume warp_labels(const LabelVolume& labels, const DisplacementField& u);
LabelVolume warp_labels(const LabelVolume& labels, const AffineTransform& t);

} // namespace edgereg
