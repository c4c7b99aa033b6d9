#pragma once

#include <array>
#include <vector>

#include "rtatl/tensor.hpp"

namespace rtatl {

using Landmarks = std::vector<std::array<double, 2>>;  // (x, y)

// RGB image with values in [0,1], row-major HxWx3.
struct Image {
    int h = 0, w = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_ * 3, fill) {}

    double& at(int y, int x, int c) { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }

    // Bilinear sample with zero outside the frame.
    double sample(double y, double x, int c) const;

    Tensor to_chw() const;                   // [3,h,w]
    static Image from_chw(const Tensor& t);  // [3,h,w] or [B=1,3,h,w]
};

// 2x3 affine transform mapping (x,y) -> (m0 x + m1 y + m2, m3 x + m4 y + m5).
struct Affine {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    std::array<double, 2> apply(double x, double y) const {
        return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
    }
    Affine inverse() const;
    static Affine identity() { return {}; }
};

// Unique similarity (rotation+scale+translation) mapping p1->q1, p2->q2.
// Throws DataError when p1 == p2.
Affine similarity_from_two_points(std::array<double, 2> p1, std::array<double, 2> p2,
                                  std::array<double, 2> q1, std::array<double, 2> q2);

Image warp_image(const Image& src, const Affine& t, int out_h, int out_w);
Landmarks transform_landmarks(const Landmarks& lms, const Affine& t);

// Soft-edged drawing primitives for the synthetic dataset.
void draw_ellipse(Image& img, double cy, double cx, double ry, double rx,
                  const std::array<double, 3>& color, double edge = 1.0);
void draw_rect(Image& img, double y0, double x0, double y1, double x1,
               const std::array<double, 3>& color, double edge = 1.0);

}  // namespace rtatl
