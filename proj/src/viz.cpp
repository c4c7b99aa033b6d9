#include "rtatl/viz.hpp"

#include <algorithm>
#include <cmath>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {

// v in displacement units -> gray in [0,1], zero at mid-gray
double to_gray(double v, double max_abs) {
    if (max_abs <= 0.0) return 0.5;
    return 0.5 + 0.5 * v / max_abs;
}

void paste_gray_channel(Image& canvas, const Tensor& flow, int channel, int y0, int x0, int upscale) {
    const int h = flow.dim(1), w = flow.dim(2);
    double max_abs = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) max_abs = std::max(max_abs, std::fabs(flow.at(channel, y, x)));
    for (int y = 0; y < h * upscale; ++y)
        for (int x = 0; x < w * upscale; ++x) {
            const double g = to_gray(flow.at(channel, y / upscale, x / upscale), max_abs);
            for (int c = 0; c < 3; ++c) canvas.at(y0 + y, x0 + x, c) = g;
        }
}

void paste_patch(Image& canvas, const Tensor& patch, int y0, int x0, int upscale) {
    const int s = patch.dim(1);
    for (int y = 0; y < s * upscale; ++y)
        for (int x = 0; x < s * upscale; ++x)
            for (int c = 0; c < 3; ++c)
                canvas.at(y0 + y, x0 + x, c) =
                    std::clamp(patch.at(c, y / upscale, x / upscale), 0.0, 1.0);
}

}  // namespace

Image render_flow_panels(const std::vector<std::pair<Tensor, Tensor>>& gt_pred, int upscale) {
    if (gt_pred.empty()) throw DataError("render_flow_panels: no flow fields");
    const int h = gt_pred[0].first.dim(1), w = gt_pred[0].first.dim(2);
    const int gap = 4;
    const int panel_w = w * upscale, panel_h = h * upscale;
    const int rows = static_cast<int>(gt_pred.size()) * 2;
    Image canvas(rows * (panel_h + gap) + gap, 2 * (panel_w + gap) + gap, 1.0);
    int y = gap;
    for (const auto& [gt, pred] : gt_pred) {
        if (gt.ndim() != 3 || gt.dim(0) != 2 || pred.shape != gt.shape)
            throw ShapeError("render_flow_panels: flows must be matching [2,h,w]");
        paste_gray_channel(canvas, gt, 0, y, gap, upscale);
        paste_gray_channel(canvas, gt, 1, y, 2 * gap + panel_w, upscale);
        y += panel_h + gap;
        paste_gray_channel(canvas, pred, 0, y, gap, upscale);
        paste_gray_channel(canvas, pred, 1, y, 2 * gap + panel_w, upscale);
        y += panel_h + gap;
    }
    return canvas;
}

Image render_inpaint_grid(const std::vector<Tensor>& masked, const std::vector<Tensor>& original,
                          const std::vector<Tensor>& recovered, int upscale) {
    if (masked.empty() || masked.size() != original.size() || masked.size() != recovered.size())
        throw DataError("render_inpaint_grid: row lengths must match and be non-empty");
    const int s = masked[0].dim(1);
    const int gap = 4;
    const int cell = s * upscale + gap;
    Image canvas(3 * cell + gap, static_cast<int>(masked.size()) * cell + gap, 1.0);
    for (size_t i = 0; i < masked.size(); ++i) {
        const int x0 = gap + static_cast<int>(i) * cell;
        paste_patch(canvas, masked[i], gap, x0, upscale);
        paste_patch(canvas, original[i], gap + cell, x0, upscale);
        paste_patch(canvas, recovered[i], gap + 2 * cell, x0, upscale);
    }
    return canvas;
}

Image render_relation_heatmap(const Tensor& similarity, int cell_px) {
    if (similarity.ndim() != 2 || similarity.dim(0) != similarity.dim(1))
        throw ShapeError("render_relation_heatmap: similarity must be square");
    const int n = similarity.dim(0);
    Image canvas(n * cell_px, n * cell_px);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double t = std::clamp((similarity.at(i, j) + 1.0) / 2.0, 0.0, 1.0);
            for (int y = 0; y < cell_px; ++y)
                for (int x = 0; x < cell_px; ++x)
                    for (int c = 0; c < 3; ++c) canvas.at(i * cell_px + y, j * cell_px + x, c) = t;
        }
    return canvas;
}

}  // namespace rtatl
