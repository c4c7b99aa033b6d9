#pragma once

#include "rtatl/config.hpp"
#include "rtatl/layers.hpp"
#include "rtatl/transformer.hpp"

namespace rtatl {

struct BasicBlock {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    bool has_down = false;
    Conv2d down_conv;
    BatchNorm2d down_bn;

    BasicBlock() = default;
    BasicBlock(int cin, int cout, int stride, Rng& rng);
    Var forward(const Var& x, bool training);
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

// 18-layer residual trunk; four stages at strides 4, 8, 16, 32 with channel
// widths w, 2w, 4w, 8w.
struct Trunk {
    int width = 64;
    Conv2d conv1;
    BatchNorm2d bn1;
    std::vector<BasicBlock> layer1, layer2, layer3, layer4;

    struct Stages {
        Var s1, s2, s3, s4;
    };

    Trunk() = default;
    Trunk(int width, Rng& rng);
    Stages forward(const Var& images, bool training);
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

// Top-down pathway: 1x1-projected stage maps, high levels upsampled 2x and
// added down to stride-4 resolution.
struct Fusion {
    int cf = 128;
    Conv2d lat1, lat2, lat3, lat4;

    Fusion() = default;
    Fusion(int trunk_width, int cf, Rng& rng);
    Var forward(const Trunk::Stages& stages) const;
    void params(ParamMap& pm, const std::string& prefix) const;
};

// AU-specific two-convolution stack + spatial average pooling -> d vector.
struct RoIBranch {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;

    RoIBranch() = default;
    RoIBranch(int cf, int mid, int d, Rng& rng);
    Var forward(const Var& patches, bool training);  // [M,cf,p,p] -> [M,d]
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

struct Prediction {
    Var probs_global;  // [B,N]
    Var probs_roi;     // [B,N]
    Var probs_fused;   // [B,N], elementwise max of the two
};

// Separate fully connected predictors for the RoI branch (one per AU) and the
// pooled global feature, fused by max of probabilities.
struct PredictionHeads {
    std::vector<Linear> roi_heads;  // N heads, d -> 1
    Linear global_head;             // g -> N

    PredictionHeads() = default;
    PredictionHeads(int n_aus, int d, int g, Rng& rng);
    // attended: per-sample [N,d] decoder outputs; global_vec: [B,g]
    Prediction forward(const std::vector<Var>& attended, const Var& global_vec) const;
    void params(ParamMap& pm, const std::string& prefix) const;
};

// Everything the forward pass hands between stages.
struct FeatureBundle {
    Var global_maps;             // [B,8w,h/32,w/32]
    Var fused_maps;              // [B,cf,h/4,w/4]
    std::vector<Var> roi_tokens; // per sample [2N,d] pooled RoI features
    Var global_vec;              // [B,8w]
};

// Feature-coordinate boxes for every (sample, AU, side) triple, in the order
// roi_crop_bilinear expects: patches grouped by AU, then sample, then side.
std::vector<RoiBox> roi_boxes_for_batch(const std::vector<Tensor>& centers_per_sample,
                                        const AUSpec& spec, int image_size, int feat_size);

}  // namespace rtatl
