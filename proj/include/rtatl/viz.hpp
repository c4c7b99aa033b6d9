#pragma once

#include <utility>
#include <vector>

#include "rtatl/image.hpp"

namespace rtatl {

// One row of two grayscale panels (I_x left, I_y right) per flow field;
// ground truth and prediction stack as consecutive rows per sample.
// Normalization is per image, min-max to [0,255] with zero displacement at
// the midpoint.
Image render_flow_panels(const std::vector<std::pair<Tensor, Tensor>>& gt_pred, int upscale = 4);

// Three rows: masked inputs, originals, recovered patches; one column per patch.
Image render_inpaint_grid(const std::vector<Tensor>& masked, const std::vector<Tensor>& original,
                          const std::vector<Tensor>& recovered, int upscale = 2);

// N x N heatmap; cosine similarity 1 renders at maximum intensity.
Image render_relation_heatmap(const Tensor& similarity, int cell_px = 24);

}  // namespace rtatl
