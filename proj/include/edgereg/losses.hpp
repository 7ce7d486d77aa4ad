#pragma once

#include "edgereg/autodiff.hpp"
#include "edgereg/spatial.hpp"
#include "edgereg/volume.hpp"

namespace edgereg {

enum class Reduction { sum, mean };

// Objective knobs: local-MI data term D, smoothness term R, total D + alpha*R.
struct LossConfig {
    double alpha = 1.0;        // R weight for displacement-field registration
    double alpha_affine = 0.0; // R weight on affine_to_field for affine registration
    int bins = 32;             // Parzen histogram bins over [0,1]
    int window = 9;            // local-MI block edge (voxels); 0 = one global block
    double parzen_sigma = 1.0; // Gaussian kernel width in bin widths
    Reduction reduction = Reduction::mean; // voxels for R, blocks for D
};

struct LossBreakdown {
    double D = 0;
    double R = 0;
    double alpha = 0;
    double total = 0;
};

// R(u): sum (or mean, per cfg.reduction) over voxels of the squared Frobenius
// norm of the spatial Jacobian of u, forward differences, replicate boundary.
// u is (3,Z,Y,X).
template <class T>
Var<T> smoothness_ad(const Var<T>& u, const LossConfig& cfg);

// D(f,w): negative local mutual information, mean (or sum) over non-overlapping
// window^3 blocks of the Parzen-histogram MI. f and w are (Z,Y,X) or (1,Z,Y,X)
// with intensities in [0,1]. Differentiable w.r.t. both inputs.
template <class T>
Var<T> local_mi_ad(const Var<T>& f, const Var<T>& w, const LossConfig& cfg);

// Dense field equivalent to the affine map, differentiable w.r.t. params.
template <class T>
Var<T> affine_to_field_ad(const Var<T>& params, int Z, int Y, int X);

// total = D(f, warp(m, params)) + alpha_affine * R(affine_to_field(params)).
// R is reported in the breakdown even when alpha_affine = 0.
template <class T>
Var<T> total_loss_affine(const Var<T>& fixed, const Var<T>& moving, const Var<T>& params,
                         const LossConfig& cfg, LossBreakdown* bd = nullptr);

// total = D(f, warp(m, u)) + alpha * R(u); alpha = 0 returns the D node itself.
template <class T>
Var<T> total_loss_field(const Var<T>& fixed, const Var<T>& moving, const Var<T>& u,
                        const LossConfig& cfg, LossBreakdown* bd = nullptr);

// ---- plain wrappers (double precision, no graph) ----
double smoothness(const DisplacementField& u, const LossConfig& cfg = {});
double local_mi_loss(const Volume3D& f, const Volume3D& w, const LossConfig& cfg = {});
LossBreakdown total_loss(const Volume3D& f, const Volume3D& m, const AffineTransform& t,
                         const LossConfig& cfg = {});
LossBreakdown total_loss(const Volume3D& f, const Volume3D& m, const DisplacementField& u,
                         const LossConfig& cfg = {});

} // namespace edgereg
