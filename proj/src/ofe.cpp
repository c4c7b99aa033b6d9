#include "rtatl/ofe.hpp"

#include <algorithm>

#include "rtatl/errors.hpp"

namespace rtatl {

FlowHead::FlowHead(int in_channels, int mid_channels, Rng& rng)
    : up1(in_channels, mid_channels, 4, 2, 1, false, rng),
      up2(mid_channels, 2, 4, 2, 1, true, rng),
      bn1(mid_channels) {}

Var FlowHead::forward(const Var& global_maps, bool training) {
    if (global_maps.val().ndim() != 4)
        throw ShapeError("flow head: expected [B,C,h,w], got " + shape_str(global_maps.shape()));
    ++calls;
    return up2.forward(relu(bn1.forward(up1.forward(global_maps), training)));
}

void FlowHead::params(ParamMap& pm, const std::string& prefix) const {
    up1.params(pm, prefix + ".up1");
    up2.params(pm, prefix + ".up2");
    bn1.params(pm, prefix + ".bn1");
}

void FlowHead::buffers(BufferMap& bm, const std::string& prefix) { bn1.buffers(bm, prefix + ".bn1"); }

Var flow_loss(const Var& f_p, const Tensor& f_g, const std::vector<bool>& valid) {
    if (f_p.val().ndim() != 4 || f_p.shape()[1] != 2)
        throw ShapeError("flow_loss: prediction must be [B,2,h,w]");
    const int B = f_p.shape()[0];
    if (static_cast<size_t>(B) != valid.size()) throw ShapeError("flow_loss: valid mask length mismatch");
    const int n_valid = static_cast<int>(std::count(valid.begin(), valid.end(), true));
    if (n_valid == 0) return Var(Tensor::scalar(0.0));
    if (f_g.shape != f_p.shape()) throw ShapeError("flow_loss: target shape mismatch");

    // zero out invalid rows of both prediction and target so they can never
    // contribute loss or gradient
    Tensor mask(f_p.shape(), 0.0);
    Tensor target = f_g;
    const long long per = f_p.val().numel() / B;
    for (int b = 0; b < B; ++b) {
        if (valid[static_cast<size_t>(b)]) {
            std::fill(mask.v.begin() + b * per, mask.v.begin() + (b + 1) * per, 1.0);
        } else {
            std::fill(target.v.begin() + b * per, target.v.begin() + (b + 1) * per, 0.0);
        }
    }
    Var diff = sub(mul_const(f_p, mask), Var(std::move(target)));
    return scale(sum_all(abs_v(diff)), 1.0 / n_valid);
}

}  // namespace rtatl
