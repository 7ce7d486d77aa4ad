#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace edgereg {

// 8-bit grayscale PNG, row-major (height rows of width pixels).
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_png_gray8(const std::string& path, int& width, int& height);

} // namespace edgereg
