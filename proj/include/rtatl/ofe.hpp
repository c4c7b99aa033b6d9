#pragma once

#include "rtatl/layers.hpp"

namespace rtatl {

// Two transposed-convolution stages turn the stride-32 global maps into a
// stride-8 two-channel displacement field; output stays linear (flow is
// signed).
struct FlowHead {
    ConvTranspose2d up1, up2;
    BatchNorm2d bn1;
    mutable long long calls = 0;

    FlowHead() = default;
    FlowHead(int in_channels, int mid_channels, Rng& rng);
    Var forward(const Var& global_maps, bool training);  // [B,C,h,w] -> [B,2,4h,4w]
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

// Mean over flow-bearing samples of the per-map L1 distance (sum over cells
// and channels). `valid` flags which batch entries carry a target; samples
// without one contribute exactly zero loss and zero gradient.
Var flow_loss(const Var& f_p, const Tensor& f_g, const std::vector<bool>& valid);

}  // namespace rtatl
