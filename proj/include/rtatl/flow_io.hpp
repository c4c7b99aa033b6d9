#pragma once

#include <string>

#include "rtatl/tensor.hpp"

namespace rtatl {

// Middlebury .flo layout: float32 magic 202021.25, int32 width, int32 height,
// then row-major interleaved float32 (u,v) pairs. Little-endian, bit-exact.
// In memory flow fields are [2,h,w] tensors (channel 0 = u/x, 1 = v/y).
constexpr float kFloMagic = 202021.25f;

Tensor read_flo(const std::string& path);
void write_flo(const std::string& path, const Tensor& flow);

}  // namespace rtatl
