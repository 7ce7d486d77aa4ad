#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "edgereg/tensor.hpp"

namespace edgereg {

// Scalar intensity volume, values in [0,1], layout (Z,Y,X) with x fastest.
struct Volume3D {
    Tensor<float> data;                      // (Z,Y,X)
    std::array<float, 3> spacing{1, 1, 1};   // (sx, sy, sz)

    int dz() const { return data.dim(0); }
    int dy() const { return data.dim(1); }
    int dx() const { return data.dim(2); }
};

// Integer label volume, same geometry as its intensity counterpart.
struct LabelVolume {
    Tensor<uint8_t> data; // (Z,Y,X)
    std::array<float, 3> spacing{1, 1, 1};

    int dz() const { return data.dim(0); }
    int dy() const { return data.dim(1); }
    int dx() const { return data.dim(2); }
};

// Dense displacement field in voxel units. Channel 0 is the x component,
// 1 the y component, 2 the z component; layout (3,Z,Y,X).
struct DisplacementField {
    Tensor<float> data; // (3,Z,Y,X)
    std::array<float, 3> spacing{1, 1, 1};

    int dz() const { return data.dim(1); }
    int dy() const { return data.dim(2); }
    int dx() const { return data.dim(3); }

    static DisplacementField zeros(int Z, int Y, int X) {
        DisplacementField f;
        f.data = Tensor<float>({3, Z, Y, X});
        return f;
    }
};

// VOL3 container: 40-byte header (magic "VOL3", u32 version=1, u32 dims x/y/z,
// f32 spacing x/y/z, u32 dtype 0=float32 1=uint8, u32 channels), then the raw
// little-endian payload, x fastest, channels outermost.
Volume3D read_volume(const std::string& path);
LabelVolume read_labels(const std::string& path);
DisplacementField read_field(const std::string& path);

void write_volume(const std::string& path, const Volume3D& v);
void write_labels(const std::string& path, const LabelVolume& v);
void write_field(const std::string& path, const DisplacementField& f);

// Reads a float volume and min-max rescales it to [0,1] when it strays outside
// (constant volumes map to 0). For data produced elsewhere.
Volume3D read_volume_normalized(const std::string& path);

} // namespace edgereg
