#pragma once

#include <vector>

#include "rtatl/autograd.hpp"

namespace rtatl {

// Convolution stencils over [B,C,H,W] tensors, im2col + GEMM inside.
// conv2d weight layout [Cout,Cin,kh,kw]; transposed conv [Cin,Cout,kh,kw].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Batch statistics over (B,H,W) per channel in training mode, running
// statistics in eval mode. running_mean/var are owned by the layer and
// updated in place during training.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double eps = 1e-5, double momentum = 0.1);

Var maxpool2d(const Var& x, int k, int stride, int pad);
Var avgpool_global(const Var& x);  // [B,C,H,W] -> [B,C]
Var upsample2x_nearest(const Var& x);

// Layer normalization over the last axis of a [R,d] matrix.
Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Axis-aligned box in feature-map coordinates, attached to batch element b.
struct RoiBox {
    int b = 0;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Bilinear crop of each box into a fixed p x p grid (one sample per cell,
// taken at the cell center). Output [M,C,p,p] in box order.
Var roi_crop_bilinear(const Var& fmap, const std::vector<RoiBox>& boxes, int p);

}  // namespace rtatl
