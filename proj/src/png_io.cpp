#include "edgereg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels) {
    require(width > 0 && height > 0, "write_png_gray8: dimensions must be positive");
    require(pixels.size() == size_t(width) * size_t(height),
            "write_png_gray8: pixel buffer does not match dimensions");

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("write_png_gray8: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("write_png_gray8: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("write_png_gray8: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("write_png_gray8: libpng failure writing " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + size_t(y) * size_t(width)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png_gray8(const std::string& path, int& width, int& height) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("read_png_gray8: cannot open " + path);

    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw format_error("read_png_gray8: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("read_png_gray8: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("read_png_gray8: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("read_png_gray8: libpng failure reading " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    width = int(png_get_image_width(png, info));
    height = int(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("read_png_gray8: expected 8-bit grayscale: " + path);
    }

    std::vector<uint8_t> pixels(size_t(width) * size_t(height));
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) rows[size_t(y)] = pixels.data() + size_t(y) * size_t(width);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

} // namespace edgereg
