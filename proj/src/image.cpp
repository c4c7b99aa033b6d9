#include "rtatl/image.hpp"

#include <algorithm>
#include <cmath>

#include "rtatl/errors.hpp"

namespace rtatl {

double Image::sample(double y, double x, int c) const {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return at(yy, xx, c);
    };
    return (1 - fy) * (1 - fx) * px(y0, x0) + (1 - fy) * fx * px(y0, x0 + 1) +
           fy * (1 - fx) * px(y0 + 1, x0) + fy * fx * px(y0 + 1, x0 + 1);
}

Tensor Image::to_chw() const {
    Tensor t(Shape{3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at(c, y, x) = at(y, x, c);
    return t;
}

Image Image::from_chw(const Tensor& t) {
    Shape s = t.shape;
    if (s.size() == 4 && s[0] == 1) s = {s[1], s[2], s[3]};
    if (s.size() != 3 || s[0] != 3) throw ShapeError("from_chw: need [3,h,w], got " + shape_str(t.shape));
    Image img(s[1], s[2]);
    const double* p = t.data();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[2]; ++x) img.at(y, x, c) = *p++;
    return img;
}

Affine Affine::inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::fabs(det) < 1e-12) throw DataError("affine transform is singular");
    Affine r;
    r.m[0] = m[4] / det;
    r.m[1] = -m[1] / det;
    r.m[3] = -m[3] / det;
    r.m[4] = m[0] / det;
    r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
    r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
    return r;
}

Affine similarity_from_two_points(std::array<double, 2> p1, std::array<double, 2> p2,
                                  std::array<double, 2> q1, std::array<double, 2> q2) {
    // Complex-plane form: a = (q2-q1)/(p2-p1), b = q1 - a*p1.
    const double dx = p2[0] - p1[0], dy = p2[1] - p1[1];
    const double den = dx * dx + dy * dy;
    if (den < 1e-12) throw DataError("degenerate landmarks: anchor points coincide");
    const double ex = q2[0] - q1[0], ey = q2[1] - q1[1];
    const double ar = (ex * dx + ey * dy) / den;
    const double ai = (ey * dx - ex * dy) / den;
    Affine t;
    t.m[0] = ar;
    t.m[1] = -ai;
    t.m[3] = ai;
    t.m[4] = ar;
    t.m[2] = q1[0] - (ar * p1[0] - ai * p1[1]);
    t.m[5] = q1[1] - (ai * p1[0] + ar * p1[1]);
    return t;
}

Image warp_image(const Image& src, const Affine& t, int out_h, int out_w) {
    const Affine inv = t.inverse();
    Image out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.sample(sy, sx, c);
        }
    return out;
}

Landmarks transform_landmarks(const Landmarks& lms, const Affine& t) {
    Landmarks out;
    out.reserve(lms.size());
    for (const auto& p : lms) out.push_back(t.apply(p[0], p[1]));
    return out;
}

namespace {
// Coverage in [0,1] fading over `edge` pixels outside the shape.
inline void blend(Image& img, int y, int x, double cov, const std::array<double, 3>& color) {
    if (cov <= 0.0) return;
    cov = std::min(1.0, cov);
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1.0 - cov) * img.at(y, x, c) + cov * color[c];
}
}  // namespace

void draw_ellipse(Image& img, double cy, double cx, double ry, double rx,
                  const std::array<double, 3>& color, double edge) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - edge - 1)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + ry + edge + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - edge - 1)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + rx + edge + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double ny = (y - cy) / ry, nx = (x - cx) / rx;
            const double r = std::sqrt(ny * ny + nx * nx);
            // distance to boundary approximated in pixels via local radius
            const double rad = std::min(ry, rx);
            const double dist = (1.0 - r) * rad;
            blend(img, y, x, dist / edge + 0.5, color);
        }
}

void draw_rect(Image& img, double ry0, double rx0, double ry1, double rx1,
               const std::array<double, 3>& color, double edge) {
    const int y0 = std::max(0, static_cast<int>(std::floor(ry0 - edge - 1)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(ry1 + edge + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(rx0 - edge - 1)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(rx1 + edge + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = std::min(y - ry0, ry1 - y);
            const double dx = std::min(x - rx0, rx1 - x);
            const double dist = std::min(dy, dx);
            blend(img, y, x, dist / edge + 0.5, color);
        }
}

}  // namespace rtatl
