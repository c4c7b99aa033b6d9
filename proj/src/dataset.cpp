#include "rtatl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rtatl/errors.hpp"
#include "rtatl/flow_io.hpp"
#include "rtatl/png_io.hpp"

namespace rtatl {

namespace {
constexpr double kEyeXFrac = 0.3;   // canonical left-eye x as fraction of side
constexpr double kEyeYFrac = 0.4;
constexpr double kMaskFill = 1.0;   // erased RoIs are painted white
}  // namespace

Affine align_transform(const Landmarks& lms, int aligned_size, const AUSpec& spec) {
    const size_t need = static_cast<size_t>(std::max(spec.anchor_left, spec.anchor_right)) + 1;
    if (lms.size() < need)
        throw DataError("landmark set too small for anchors (" + std::to_string(lms.size()) + " points)");
    const double s = aligned_size;
    return similarity_from_two_points(lms[spec.anchor_left], lms[spec.anchor_right],
                                      {kEyeXFrac * s, kEyeYFrac * s},
                                      {(1.0 - kEyeXFrac) * s, kEyeYFrac * s});
}

std::pair<Image, Affine> align_face(const Image& raw, const Landmarks& lms, int aligned_size,
                                    const AUSpec& spec) {
    Affine t = align_transform(lms, aligned_size, spec);
    return {warp_image(raw, t, aligned_size, aligned_size), t};
}

PixelBox box_from_center(double cx, double cy, int s, int image_size) {
    if (s > image_size)
        throw ShapeError("RoI side " + std::to_string(s) + " exceeds image size " +
                         std::to_string(image_size));
    const double half = s / 2.0;
    cx = std::min(static_cast<double>(image_size) - half, std::max(half, cx));
    cy = std::min(static_cast<double>(image_size) - half, std::max(half, cy));
    PixelBox b;
    b.x0 = std::clamp(static_cast<int>(std::lround(cx - half)), 0, image_size - s);
    b.y0 = std::clamp(static_cast<int>(std::lround(cy - half)), 0, image_size - s);
    b.x1 = b.x0 + s;
    b.y1 = b.y0 + s;
    return b;
}

Tensor compute_au_centers(const Landmarks& lms, const AUSpec& spec, int image_size) {
    const double iod = std::hypot(lms[spec.anchor_right][0] - lms[spec.anchor_left][0],
                                  lms[spec.anchor_right][1] - lms[spec.anchor_left][1]);
    const double unit = iod / 2.0;
    const double half = spec.patch_size / 2.0;
    Tensor centers(Shape{spec.n_aus(), 2, 2});
    for (int i = 0; i < spec.n_aus(); ++i) {
        for (int side = 0; side < 2; ++side) {
            const RoiRule& r = spec.roi_rules[i][side];
            if (r.landmark < 0 || r.landmark >= static_cast<int>(lms.size()))
                throw DataError("roi rule references landmark " + std::to_string(r.landmark) +
                                " but only " + std::to_string(lms.size()) + " are present");
            double cx = lms[r.landmark][0] + r.dx * unit;
            double cy = lms[r.landmark][1] + r.dy * unit;
            cx = std::min(static_cast<double>(image_size) - half, std::max(half, cx));
            cy = std::min(static_cast<double>(image_size) - half, std::max(half, cy));
            centers.at(i, side, 0) = cx;
            centers.at(i, side, 1) = cy;
        }
    }
    return centers;
}

FlowPair prepare_flow_target(const Image& frame_t_raw, const Image& frame_t3_raw,
                             const Affine& transform_t, int aligned_size,
                             const FlowProvider& provider) {
    FlowPair out;
    out.frame_t = warp_image(frame_t_raw, transform_t, aligned_size, aligned_size);
    out.frame_t3 = warp_image(frame_t3_raw, transform_t, aligned_size, aligned_size);
    out.flow = provider.compute(out.frame_t, out.frame_t3);
    if (!out.flow.all_finite()) throw DataError("flow provider produced non-finite values");
    return out;
}

Tensor downsample_flow(const Tensor& flow, int target_hw, double scale) {
    if (flow.ndim() != 3 || flow.dim(0) != 2)
        throw ShapeError("downsample_flow: flow must be [2,h,w]");
    const int H = flow.dim(1), W = flow.dim(2);
    if (H % target_hw != 0 || W % target_hw != 0)
        throw ShapeError("downsample_flow: target " + std::to_string(target_hw) +
                         " does not divide source " + std::to_string(H) + "x" + std::to_string(W));
    const int fy = H / target_hw, fx = W / target_hw;
    Tensor out(Shape{2, target_hw, target_hw});
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < target_hw; ++y)
            for (int x = 0; x < target_hw; ++x) {
                double s = 0.0;
                for (int i = 0; i < fy; ++i)
                    for (int j = 0; j < fx; ++j) s += flow.at(c, y * fy + i, x * fx + j);
                out.at(c, y, x) = s / (fy * fx) * scale;
            }
    return out;
}

namespace {

Tensor crop_chw(const Tensor& t, int off_y, int off_x, int size) {
    const int C = t.dim(0);
    Tensor out(Shape{C, size, size});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) out.at(c, y, x) = t.at(c, y + off_y, x + off_x);
    return out;
}

Tensor hflip_chw(const Tensor& t) {
    const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Tensor out(t.shape);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at(c, y, x) = t.at(c, y, W - 1 - x);
    return out;
}

}  // namespace

Sample augment_with(const Sample& s, const HyperParams& hp, int off_x, int off_y, bool flip) {
    const int in = hp.input_size;
    const int src = s.image.dim(1);
    if (off_x < 0 || off_y < 0 || off_x + in > src || off_y + in > src)
        throw DataError("augment: crop window outside image");

    Sample out = s;
    out.image = crop_chw(s.image, off_y, off_x, in);
    if (flip) out.image = hflip_chw(out.image);

    if (s.landmarks) {
        Landmarks lms;
        lms.reserve(s.landmarks->size());
        for (const auto& p : *s.landmarks) {
            double x = p[0] - off_x, y = p[1] - off_y;
            if (flip) x = (in - 1) - x;
            lms.push_back({x, y});
        }
        out.landmarks = std::move(lms);
    }

    if (s.flow_target) {
        Tensor f = crop_chw(*s.flow_target, off_y, off_x, in);
        if (flip) {
            f = hflip_chw(f);
            // mirrored kinematics: the x displacement changes sign
            for (int y = 0; y < in; ++y)
                for (int x = 0; x < in; ++x) f.at(0, y, x) = -f.at(0, y, x);
        }
        out.flow_target = std::move(f);
    }

    if (s.mask) {
        MaskDescriptor m = *s.mask;
        for (int side = 0; side < 2; ++side) {
            PixelBox& b = m.boxes[side];
            b.x0 -= off_x;
            b.x1 -= off_x;
            b.y0 -= off_y;
            b.y1 -= off_y;
            if (b.x0 < 0 || b.y0 < 0 || b.x1 > in || b.y1 > in)
                throw DataError("augment: mask box leaves the crop window");
            if (flip) {
                const int nx0 = in - b.x1;
                b.x1 = in - b.x0;
                b.x0 = nx0;
                m.patches[side] = hflip_chw(m.patches[side]);
            }
        }
        if (flip) {
            std::swap(m.boxes[0], m.boxes[1]);
            std::swap(m.patches[0], m.patches[1]);
        }
        out.mask = std::move(m);
    }
    return out;
}

Sample augment(const Sample& s, const HyperParams& hp, Rng& rng, bool training) {
    const int margin = s.image.dim(1) - hp.input_size;
    if (margin < 0) throw DataError("augment: sample smaller than input_size");
    if (!training) return augment_with(s, hp, margin / 2, margin / 2, false);
    const int off_x = margin > 0 ? rng.uniform_int(margin + 1) : 0;
    const int off_y = margin > 0 ? rng.uniform_int(margin + 1) : 0;
    return augment_with(s, hp, off_x, off_y, rng.bernoulli(0.5));
}

Sample apply_roi_mask_at(const Sample& s, const AUSpec& spec, int au_index) {
    if (!s.landmarks) throw DataError("apply_roi_mask: sample has no landmarks");
    if (au_index < 0 || au_index >= spec.n_aus()) throw DataError("apply_roi_mask: AU index out of range");
    const int size = s.image.dim(1);
    const int ps = spec.patch_size;
    const Tensor centers = compute_au_centers(*s.landmarks, spec, size);

    Sample out = s;
    MaskDescriptor m;
    m.au_index = au_index;
    for (int side = 0; side < 2; ++side) {
        m.boxes[side] =
            box_from_center(centers.at(au_index, side, 0), centers.at(au_index, side, 1), ps, size);
        Tensor patch(Shape{3, ps, ps});
        const PixelBox& b = m.boxes[side];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x) patch.at(c, y, x) = out.image.at(c, b.y0 + y, b.x0 + x);
        m.patches[side] = std::move(patch);
    }
    for (int side = 0; side < 2; ++side) {
        const PixelBox& b = m.boxes[side];
        for (int c = 0; c < 3; ++c)
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x) out.image.at(c, y, x) = kMaskFill;
    }
    // Any AU whose own RoI intersects the erased area loses its evidence.
    for (int j = 0; j < spec.n_aus(); ++j) {
        for (int side = 0; side < 2; ++side) {
            const PixelBox bj =
                box_from_center(centers.at(j, side, 0), centers.at(j, side, 1), ps, size);
            if (bj.overlaps(m.boxes[0]) || bj.overlaps(m.boxes[1])) {
                m.excluded_au_indices.insert(j);
                break;
            }
        }
    }
    out.mask = std::move(m);
    return out;
}

Sample apply_roi_mask(const Sample& s, const AUSpec& spec, Rng& rng) {
    return apply_roi_mask_at(s, spec, rng.uniform_int(spec.n_aus()));
}

// ---------------------------------------------------------------------------
// block-matching flow provider

Tensor BlockMatchingFlow::compute(const Image& a, const Image& b) const {
    if (a.h != b.h || a.w != b.w) throw DataError("flow frames differ in size");
    const int H = a.h, W = a.w;
    Tensor flow(Shape{2, H, W});

    auto gray = [](const Image& im, int y, int x) {
        return (im.at(y, x, 0) + im.at(y, x, 1) + im.at(y, x, 2)) / 3.0;
    };

    const int step = block_;
    for (int by = 0; by < H; by += step) {
        for (int bx = 0; bx < W; bx += step) {
            const int y1 = std::min(by + step, H), x1 = std::min(bx + step, W);
            // SAD over all integer shifts in the search window
            double best = 1e300;
            int bu = 0, bv = 0;
            std::vector<std::vector<double>> sad(2 * search_ + 1,
                                                 std::vector<double>(2 * search_ + 1, 1e300));
            for (int v = -search_; v <= search_; ++v)
                for (int u = -search_; u <= search_; ++u) {
                    double s = 0.0;
                    int cnt = 0;
                    for (int y = by; y < y1; ++y) {
                        const int yy = y + v;
                        if (yy < 0 || yy >= H) continue;
                        for (int x = bx; x < x1; ++x) {
                            const int xx = x + u;
                            if (xx < 0 || xx >= W) continue;
                            s += std::fabs(gray(b, yy, xx) - gray(a, y, x));
                            ++cnt;
                        }
                    }
                    if (cnt == 0) continue;
                    s /= cnt;
                    sad[v + search_][u + search_] = s;
                    // deterministic tie-break toward the smaller displacement
                    if (s < best - 1e-12 ||
                        (std::fabs(s - best) <= 1e-12 && u * u + v * v < bu * bu + bv * bv)) {
                        best = s;
                        bu = u;
                        bv = v;
                    }
                }

            // parabolic refinement along each axis when neighbors exist;
            // a perfect integer match needs none
            double du = 0.0, dv = 0.0;
            const int ui = bu + search_, vi = bv + search_;
            if (best < 1e-12) {
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) {
                        flow.at(0, y, x) = bu;
                        flow.at(1, y, x) = bv;
                    }
                continue;
            }
            if (ui > 0 && ui < 2 * search_) {
                const double l = sad[vi][ui - 1], c = sad[vi][ui], r = sad[vi][ui + 1];
                const double den = l - 2 * c + r;
                if (l < 1e299 && r < 1e299 && den > 1e-12) du = 0.5 * (l - r) / den;
            }
            if (vi > 0 && vi < 2 * search_) {
                const double t = sad[vi - 1][ui], c = sad[vi][ui], d = sad[vi + 1][ui];
                const double den = t - 2 * c + d;
                if (t < 1e299 && d < 1e299 && den > 1e-12) dv = 0.5 * (t - d) / den;
            }

            for (int y = by; y < y1; ++y)
                for (int x = bx; x < x1; ++x) {
                    flow.at(0, y, x) = bu + du;
                    flow.at(1, y, x) = bv + dv;
                }
        }
    }
    return flow;
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

struct SynthFace {
    Landmarks lms;  // scheme documented in synth.cfg
};

SynthFace face_landmarks(double S, double ox, double oy) {
    SynthFace f;
    auto P = [&](double x, double y) { f.lms.push_back({x * S + ox, y * S + oy}); };
    P(0.30, 0.40);  // 0 left eye
    P(0.70, 0.40);  // 1 right eye
    P(0.30, 0.30);  // 2 left brow
    P(0.70, 0.30);  // 3 right brow
    P(0.50, 0.62);  // 4 nose tip
    P(0.44, 0.62);  // 5 left nose wing
    P(0.56, 0.62);  // 6 right nose wing
    P(0.39, 0.75);  // 7 left mouth corner
    P(0.61, 0.75);  // 8 right mouth corner
    P(0.50, 0.715); // 9 mouth top
    P(0.50, 0.785); // 10 mouth bottom
    P(0.50, 0.93);  // 11 chin
    P(0.28, 0.62);  // 12 left cheek
    P(0.72, 0.62);  // 13 right cheek
    return f;
}

// dlib-68 layout on the same synthetic face, for configs indexed against a
// 68-point detector. Landmarks 36/45 sit at the canonical eye anchors so the
// alignment transform is a pure translation and analytic flow passes through
// the warp unchanged.
SynthFace face_landmarks_68(double S, double ox, double oy) {
    SynthFace f;
    f.lms.resize(68);
    auto P = [&](int i, double x, double y) { f.lms[static_cast<size_t>(i)] = {x * S + ox, y * S + oy}; };
    // 0-16 jaw: lower arc of the face ellipse
    for (int i = 0; i <= 16; ++i) {
        const double a = M_PI + M_PI * i / 16.0;
        P(i, 0.5 + 0.33 * std::cos(a), 0.48 - 0.45 * std::sin(a));
    }
    for (int i = 17; i <= 21; ++i) P(i, 0.20 + 0.05 * (i - 17), 0.30);  // left brow
    for (int i = 22; i <= 26; ++i) P(i, 0.60 + 0.05 * (i - 22), 0.30);  // right brow
    for (int i = 27; i <= 30; ++i) P(i, 0.50, 0.40 + 0.0733 * (i - 27));  // nose bridge
    for (int i = 31; i <= 35; ++i) P(i, 0.44 + 0.03 * (i - 31), 0.64);    // nostrils
    // eyes: 36/45 are the alignment anchors
    P(36, 0.30, 0.40);
    P(37, 0.325, 0.385);
    P(38, 0.36, 0.385);
    P(39, 0.39, 0.40);
    P(40, 0.36, 0.415);
    P(41, 0.325, 0.415);
    P(42, 0.61, 0.40);
    P(43, 0.64, 0.385);
    P(44, 0.675, 0.385);
    P(45, 0.70, 0.40);
    P(46, 0.675, 0.415);
    P(47, 0.64, 0.415);
    // outer mouth
    P(48, 0.39, 0.75);
    P(49, 0.43, 0.725);
    P(50, 0.46, 0.715);
    P(51, 0.50, 0.712);
    P(52, 0.54, 0.715);
    P(53, 0.57, 0.725);
    P(54, 0.61, 0.75);
    P(55, 0.57, 0.775);
    P(56, 0.54, 0.785);
    P(57, 0.50, 0.79);
    P(58, 0.46, 0.785);
    P(59, 0.43, 0.775);
    // inner mouth
    P(60, 0.42, 0.75);
    P(61, 0.46, 0.74);
    P(62, 0.50, 0.738);
    P(63, 0.54, 0.74);
    P(64, 0.58, 0.75);
    P(65, 0.54, 0.762);
    P(66, 0.50, 0.764);
    P(67, 0.46, 0.762);
    return f;
}

int max_landmark_index(const AUSpec& spec) {
    int mx = std::max(spec.anchor_left, spec.anchor_right);
    for (const auto& pair : spec.roi_rules)
        for (const RoiRule& r : pair) mx = std::max(mx, r.landmark);
    return mx;
}

// drawing anchors shared by both landmark schemes
struct DrawGeom {
    std::array<double, 2> eye_l, eye_r, brow_l, brow_r, nose, mouth_l, mouth_r, mouth_t, mouth_b;
};

DrawGeom geom_from(const SynthFace& f) {
    const auto& L = f.lms;
    DrawGeom g;
    if (L.size() >= 68) {
        auto mid = [&](int a, int b) {
            return std::array<double, 2>{(L[a][0] + L[b][0]) / 2.0, (L[a][1] + L[b][1]) / 2.0};
        };
        g.eye_l = mid(36, 39);
        g.eye_r = mid(42, 45);
        g.brow_l = L[19];
        g.brow_r = L[24];
        g.nose = L[30];
        g.mouth_l = L[48];
        g.mouth_r = L[54];
        g.mouth_t = L[51];
        g.mouth_b = L[57];
    } else {
        g.eye_l = L[0];
        g.eye_r = L[1];
        g.brow_l = L[2];
        g.brow_r = L[3];
        g.nose = L[4];
        g.mouth_l = L[7];
        g.mouth_r = L[8];
        g.mouth_t = L[9];
        g.mouth_b = L[10];
    }
    return g;
}

void render_face(Image& img, const SynthFace& f, const std::vector<int>& labels, const AUSpec& spec,
                 double S) {
    const std::array<double, 3> skin{0.85, 0.72, 0.60};
    const std::array<double, 3> dark{0.15, 0.12, 0.10};
    const std::array<double, 3> lip{0.65, 0.25, 0.25};
    const DrawGeom g = geom_from(f);

    draw_ellipse(img, g.nose[1] - 0.07 * S, g.nose[0], 0.42 * S, 0.33 * S, skin, 1.5);
    draw_ellipse(img, g.eye_l[1], g.eye_l[0], 0.035 * S, 0.05 * S, dark);
    draw_ellipse(img, g.eye_r[1], g.eye_r[0], 0.035 * S, 0.05 * S, dark);
    for (const auto& b : {g.brow_l, g.brow_r})
        draw_rect(img, b[1] - 0.012 * S, b[0] - 0.07 * S, b[1] + 0.012 * S, b[0] + 0.07 * S, dark);
    draw_ellipse(img, g.nose[1], g.nose[0], 0.02 * S, 0.05 * S, dark);
    draw_ellipse(img, (g.mouth_t[1] + g.mouth_b[1]) / 2.0, g.mouth_t[0],
                 (g.mouth_b[1] - g.mouth_t[1]) / 2.0, (g.mouth_r[0] - g.mouth_l[0]) / 2.0, lip);

    // one soft-edged marker per active AU, centered on its two RoI centers and
    // strictly inside the s x s boxes so label evidence is local by construction
    const int size = img.h;
    const Tensor centers = compute_au_centers(f.lms, spec, size);
    const double half = spec.patch_size * 0.5 - 2.5;
    for (int i = 0; i < spec.n_aus(); ++i) {
        if (!labels[static_cast<size_t>(i)]) continue;
        const double k = 1.7 * i;
        const std::array<double, 3> col{0.5 + 0.5 * std::sin(k), 0.5 + 0.5 * std::sin(k + 2.1),
                                        0.5 + 0.5 * std::sin(k + 4.2)};
        for (int side = 0; side < 2; ++side) {
            const double cx = centers.at(i, side, 0), cy = centers.at(i, side, 1);
            draw_rect(img, cy - half, cx - half, cy + half, cx + half, col);
        }
    }
}

}  // namespace

SynthItem synth_render_frame(const AUSpec& spec, const HyperParams& hp,
                             const std::vector<int>& labels, double offset_x, double offset_y) {
    if (labels.size() != static_cast<size_t>(spec.n_aus()))
        throw DataError("synth_render_frame: label vector length mismatch");
    const int S = hp.aligned_size;
    SynthItem item;
    item.labels = labels;
    const int mx = max_landmark_index(spec);
    if (mx >= 68)
        throw DataError("synthetic faces provide at most 68 landmarks, config references " +
                        std::to_string(mx));
    SynthFace face = mx < 14 ? face_landmarks(S, offset_x, offset_y)
                             : face_landmarks_68(S, offset_x, offset_y);
    Image img(S, S, 0.08);
    render_face(img, face, labels, spec, S);
    item.image = std::move(img);
    item.landmarks = face.lms;
    return item;
}

std::vector<SynthItem> synth_dataset(uint64_t seed, int n_subjects, int frames_per_subject,
                                     const AUSpec& spec, const HyperParams& hp) {
    std::vector<SynthItem> out;
    const int S = hp.aligned_size;
    for (int subj = 0; subj < n_subjects; ++subj) {
        Rng rng(seed * 1315423911ull + static_cast<uint64_t>(subj) * 2654435761ull + 17);
        std::vector<int> labels(static_cast<size_t>(spec.n_aus()));
        for (int i = 0; i < spec.n_aus(); ++i) labels[static_cast<size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
        // guarantee at least one active AU so every subject carries signal
        if (std::count(labels.begin(), labels.end(), 1) == 0)
            labels[static_cast<size_t>(rng.uniform_int(spec.n_aus()))] = 1;
        const double vx = rng.uniform(-0.6, 0.6);
        const double vy = rng.uniform(-0.6, 0.6);

        for (int f = 0; f < frames_per_subject; ++f) {
            SynthItem item = synth_render_frame(spec, hp, labels, vx * f, vy * f);
            item.subject_id = "S" + std::to_string(subj);
            item.frame_index = f;
            if (f + hp.flow_step < frames_per_subject) {
                Tensor flow(Shape{2, S, S});
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        flow.at(0, y, x) = vx * hp.flow_step;
                        flow.at(1, y, x) = vy * hp.flow_step;
                    }
                item.flow = std::move(flow);
            }
            out.push_back(std::move(item));
        }
    }
    return out;
}

std::vector<Sample> synth_to_samples(const std::vector<SynthItem>& items, const AUSpec& spec,
                                     const HyperParams& hp, bool keep_labels, bool keep_flow) {
    std::vector<Sample> out;
    out.reserve(items.size());
    for (const SynthItem& it : items) {
        auto [aligned, t] = align_face(it.image, it.landmarks, hp.aligned_size, spec);
        Sample s;
        s.image = aligned.to_chw();
        s.landmarks = transform_landmarks(it.landmarks, t);
        s.subject_id = it.subject_id;
        s.frame_index = it.frame_index;
        if (keep_labels) {
            s.labels = it.labels;
            s.is_labeled = true;
        }
        if (keep_flow && !it.flow.empty()) {
            // drift is a pure translation and alignment has unit scale here,
            // so the analytic flow passes through the warp unchanged
            s.flow_target = it.flow;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// manifests

Landmarks read_landmarks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open landmark file '" + path + "'");
    Landmarks lms;
    double x, y;
    while (in >> x >> y) lms.push_back({x, y});
    if (lms.empty()) throw DataError("no landmarks in '" + path + "'");
    return lms;
}

void write_landmarks(const std::string& path, const Landmarks& lms) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write landmark file '" + path + "'");
    out.precision(10);
    for (const auto& p : lms) out << p[0] << " " << p[1] << "\n";
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path + "'");
    std::vector<ManifestRow> rows;
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        while (cols.size() < 4) cols.push_back("");
        if (first && cols[0] == "path") {
            first = false;
            continue;
        }
        first = false;
        if (cols.size() < 3)
            throw DataError("manifest '" + path + "' line " + std::to_string(lineno) + ": need path,subject_id,frame_index,labels");
        ManifestRow row;
        row.path = cols[0];
        row.subject_id = cols[1];
        try {
            row.frame_index = std::stoi(cols[2]);
        } catch (...) {
            throw DataError("manifest '" + path + "' line " + std::to_string(lineno) + ": bad frame_index");
        }
        if (!cols[3].empty()) {
            std::stringstream ls(cols[3]);
            std::string tok;
            while (std::getline(ls, tok, ';')) row.labels.push_back(std::stoi(tok));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path + "'");
    out << "path,subject_id,frame_index,labels\n";
    for (const ManifestRow& r : rows) {
        out << r.path << "," << r.subject_id << "," << r.frame_index << ",";
        for (size_t i = 0; i < r.labels.size(); ++i) out << (i ? ";" : "") << r.labels[i];
        out << "\n";
    }
}

std::vector<Sample> load_dataset(const std::string& manifest_path, const AUSpec& spec,
                                 const HyperParams& hp, const std::string& data_root, bool want_flow,
                                 const FlowProvider* provider) {
    namespace fs = std::filesystem;
    auto resolve = [&](const std::string& p) {
        if (!data_root.empty() && fs::path(p).is_relative()) return (fs::path(data_root) / p).string();
        return p;
    };

    const std::vector<ManifestRow> rows = read_manifest(manifest_path);
    std::map<std::pair<std::string, int>, const ManifestRow*> by_frame;
    for (const ManifestRow& r : rows) by_frame[{r.subject_id, r.frame_index}] = &r;

    std::vector<Sample> out;
    out.reserve(rows.size());
    for (const ManifestRow& r : rows) {
        const std::string img_path = resolve(r.path);
        Image raw = read_png(img_path);
        Landmarks lms = read_landmarks(img_path + ".lms");
        auto [aligned, t] = align_face(raw, lms, hp.aligned_size, spec);

        Sample s;
        s.image = aligned.to_chw();
        s.landmarks = transform_landmarks(lms, t);
        s.subject_id = r.subject_id;
        s.frame_index = r.frame_index;
        if (!r.labels.empty()) {
            if (static_cast<int>(r.labels.size()) != spec.n_aus())
                throw DataError("manifest row '" + r.path + "': expected " +
                                std::to_string(spec.n_aus()) + " labels, got " +
                                std::to_string(r.labels.size()));
            for (int l : r.labels)
                if (l != 0 && l != 1) throw DataError("manifest row '" + r.path + "': labels must be 0/1");
            s.labels = r.labels;
            s.is_labeled = true;
        }

        if (want_flow) {
            // a target exists only when the +flow_step frame of the same video does
            const ManifestRow* next = nullptr;
            if (auto it = by_frame.find({r.subject_id, r.frame_index + hp.flow_step});
                it != by_frame.end())
                next = it->second;
            if (next) {
                const std::string flo_path = img_path + ".flo";
                if (fs::exists(flo_path)) {
                    Tensor flow = read_flo(flo_path);
                    if (flow.dim(1) != hp.aligned_size || flow.dim(2) != hp.aligned_size)
                        throw DataError("flow file '" + flo_path + "' is not at aligned resolution");
                    s.flow_target = std::move(flow);
                } else if (provider) {
                    Image raw3 = read_png(resolve(next->path));
                    FlowPair fp = prepare_flow_target(raw, raw3, t, hp.aligned_size, *provider);
                    s.flow_target = std::move(fp.flow);
                } else {
                    throw DataError("no flow target for pair (" + r.path + ", " + next->path +
                                    "): missing '" + flo_path + "' and no flow provider configured");
                }
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace rtatl
