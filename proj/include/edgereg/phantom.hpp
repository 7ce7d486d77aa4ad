#pragma once

#include <string>

#include "edgereg/spatial.hpp"
#include "edgereg/volume.hpp"

namespace edgereg {

// Synthetic pair with known ground truth. The moving image is the fixed scene
// observed through the inverse of the ground-truth map, so warping moving by
// (gt_disp then gt_affine) reproduces the fixed image.
struct PhantomPair {
    Volume3D fixed, moving;
    LabelVolume fixed_labels, moving_labels;
    AffineTransform gt_affine;  // identity when affine magnitude is 0
    DisplacementField gt_disp;  // zero field when disp magnitude is 0
    std::string modality_remap; // "none" or a description of the intensity map
};

// Fine-grained magnitudes for experiment design. Translations in voxels,
// rotations in degrees, scales/shears as dimensionless deviations.
struct PhantomControls {
    double translation = 0;
    double rotation_deg = 0;
    double scale = 0;
    double shear = 0;
    double disp = 0; // max displacement magnitude in voxels
    bool modality_shift = false;
};

PhantomPair generate_phantom(uint64_t seed, int dx, int dy, int dz, const PhantomControls& c);

// Spec'd surface: one affine magnitude drives translations (voxels), rotations
// (degrees), scales (1 +- 0.01*m) and shears (+-0.01*m).
PhantomPair generate_phantom_pair(uint64_t seed, int dx, int dy, int dz, double affine_magnitude,
                                  double disp_magnitude, bool modality_shift);

} // namespace edgereg
