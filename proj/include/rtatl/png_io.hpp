#pragma once

#include <string>

#include "rtatl/image.hpp"

namespace rtatl {

// 8-bit RGB PNG; values clamped to [0,1] on write, scaled to [0,1] on read.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace rtatl
