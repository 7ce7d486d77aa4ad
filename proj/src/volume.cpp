#include "edgereg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

constexpr uint32_t kVersion = 1;
constexpr uint32_t kDtypeF32 = 0;
constexpr uint32_t kDtypeU8 = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(uint8_t(v));
    b.push_back(uint8_t(v >> 8));
    b.push_back(uint8_t(v >> 16));
    b.push_back(uint8_t(v >> 24));
}

void put_f32(std::vector<uint8_t>& b, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(b, u);
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

float get_f32(const uint8_t* p) {
    const uint32_t u = get_u32(p);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

struct Header {
    uint32_t dx, dy, dz;
    std::array<float, 3> spacing;
    uint32_t dtype, channels;
};

Header read_header(std::FILE* f, const std::string& path) {
    uint8_t h[40];
    if (std::fread(h, 1, 40, f) != 40) throw format_error(path + ": truncated header");
    if (std::memcmp(h, "VOL3", 4) != 0) throw format_error(path + ": bad magic");
    const uint32_t ver = get_u32(h + 4);
    if (ver != kVersion) throw format_error(path + ": unsupported version " + std::to_string(ver));
    Header out;
    out.dx = get_u32(h + 8);
    out.dy = get_u32(h + 12);
    out.dz = get_u32(h + 16);
    out.spacing = {get_f32(h + 20), get_f32(h + 24), get_f32(h + 28)};
    out.dtype = get_u32(h + 32);
    out.channels = get_u32(h + 36);
    if (out.dx == 0 || out.dy == 0 || out.dz == 0) throw format_error(path + ": zero dimension");
    if (out.dtype != kDtypeF32 && out.dtype != kDtypeU8)
        throw format_error(path + ": unknown dtype " + std::to_string(out.dtype));
    if (out.channels == 0) throw format_error(path + ": zero channels");
    for (float s : out.spacing)
        if (!(s > 0.f) || !std::isfinite(s)) throw format_error(path + ": non-positive spacing");
    return out;
}

void write_blob(const std::string& path, const Header& h, const void* payload, size_t bytes) {
    std::vector<uint8_t> head;
    head.reserve(40);
    head.insert(head.end(), {'V', 'O', 'L', '3'});
    put_u32(head, kVersion);
    put_u32(head, h.dx);
    put_u32(head, h.dy);
    put_u32(head, h.dz);
    put_f32(head, h.spacing[0]);
    put_f32(head, h.spacing[1]);
    put_f32(head, h.spacing[2]);
    put_u32(head, h.dtype);
    put_u32(head, h.channels);
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw io_error(path + ": cannot open for writing");
    if (std::fwrite(head.data(), 1, head.size(), f.get()) != head.size() ||
        (bytes && std::fwrite(payload, 1, bytes, f.get()) != bytes))
        throw io_error(path + ": short write");
    if (std::fflush(f.get()) != 0) throw io_error(path + ": flush failed");
}

std::vector<uint8_t> read_payload(std::FILE* f, const std::string& path, size_t bytes) {
    std::vector<uint8_t> buf(bytes);
    if (std::fread(buf.data(), 1, bytes, f) != bytes) throw format_error(path + ": truncated payload");
    uint8_t extra;
    if (std::fread(&extra, 1, 1, f) == 1) throw format_error(path + ": trailing bytes");
    return buf;
}

Tensor<float> payload_to_f32(const std::vector<uint8_t>& buf, std::vector<int> shape) {
    Tensor<float> t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = get_f32(buf.data() + 4 * i);
    return t;
}

} // namespace

Volume3D read_volume(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error(path + ": cannot open");
    const Header h = read_header(f.get(), path);
    if (h.dtype != kDtypeF32) throw format_error(path + ": volume requires float32 payload");
    if (h.channels != 1) throw format_error(path + ": volume requires a single channel");
    const size_t n = size_t(h.dx) * h.dy * h.dz;
    const auto buf = read_payload(f.get(), path, n * 4);
    Volume3D v;
    v.spacing = h.spacing;
    v.data = payload_to_f32(buf, {int(h.dz), int(h.dy), int(h.dx)});
    for (float x : v.data) {
        if (!std::isfinite(x)) throw data_error(path + ": non-finite intensity");
        if (x < 0.f || x > 1.f) throw data_error(path + ": intensity outside [0,1]");
    }
    return v;
}

Volume3D read_volume_normalized(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error(path + ": cannot open");
    const Header h = read_header(f.get(), path);
    if (h.dtype != kDtypeF32) throw format_error(path + ": volume requires float32 payload");
    if (h.channels != 1) throw format_error(path + ": volume requires a single channel");
    const size_t n = size_t(h.dx) * h.dy * h.dz;
    const auto buf = read_payload(f.get(), path, n * 4);
    Volume3D v;
    v.spacing = h.spacing;
    v.data = payload_to_f32(buf, {int(h.dz), int(h.dy), int(h.dx)});
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (float x : v.data) {
        if (!std::isfinite(x)) throw data_error(path + ": non-finite intensity");
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (lo < 0.f || hi > 1.f) {
        const float span = hi - lo;
        if (span <= 0.f) {
            v.data.fill(0.f);
        } else {
            for (auto& x : v.data) x = (x - lo) / span;
        }
    }
    return v;
}

LabelVolume read_labels(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error(path + ": cannot open");
    const Header h = read_header(f.get(), path);
    if (h.dtype != kDtypeU8) throw format_error(path + ": labels require uint8 payload");
    if (h.channels != 1) throw format_error(path + ": labels require a single channel");
    const size_t n = size_t(h.dx) * h.dy * h.dz;
    const auto buf = read_payload(f.get(), path, n);
    LabelVolume v;
    v.spacing = h.spacing;
    v.data = Tensor<uint8_t>({int(h.dz), int(h.dy), int(h.dx)});
    std::memcpy(v.data.data(), buf.data(), n);
    return v;
}

DisplacementField read_field(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error(path + ": cannot open");
    const Header h = read_header(f.get(), path);
    if (h.dtype != kDtypeF32) throw format_error(path + ": field requires float32 payload");
    if (h.channels != 3) throw format_error(path + ": field requires 3 channels");
    const size_t n = size_t(h.dx) * h.dy * h.dz * 3;
    const auto buf = read_payload(f.get(), path, n * 4);
    DisplacementField v;
    v.spacing = h.spacing;
    v.data = payload_to_f32(buf, {3, int(h.dz), int(h.dy), int(h.dx)});
    for (float x : v.data)
        if (!std::isfinite(x)) throw data_error(path + ": non-finite displacement");
    return v;
}

void write_volume(const std::string& path, const Volume3D& v) {
    require_shape(v.data.rank() == 3, "write_volume: data must be (Z,Y,X)");
    for (float x : v.data) {
        if (!std::isfinite(x)) throw data_error(path + ": non-finite intensity");
        if (x < 0.f || x > 1.f) throw data_error(path + ": intensity outside [0,1]");
    }
    Header h{uint32_t(v.dx()), uint32_t(v.dy()), uint32_t(v.dz()), v.spacing, kDtypeF32, 1};
    static_assert(sizeof(float) == 4);
    write_blob(path, h, v.data.data(), v.data.numel() * 4);
}

void write_labels(const std::string& path, const LabelVolume& v) {
    require_shape(v.data.rank() == 3, "write_labels: data must be (Z,Y,X)");
    Header h{uint32_t(v.dx()), uint32_t(v.dy()), uint32_t(v.dz()), v.spacing, kDtypeU8, 1};
    write_blob(path, h, v.data.data(), v.data.numel());
}

void write_field(const std::string& path, const DisplacementField& f) {
    require_shape(f.data.rank() == 4 && f.data.dim(0) == 3, "write_field: data must be (3,Z,Y,X)");
    for (float x : f.data)
        if (!std::isfinite(x)) throw data_error(path + ": non-finite displacement");
    Header h{uint32_t(f.dx()), uint32_t(f.dy()), uint32_t(f.dz()), f.spacing, kDtypeF32, 3};
    write_blob(path, h, f.data.data(), f.data.numel() * 4);
}

} // namespace edgereg
