#include "rtatl/backbone.hpp"

#include "rtatl/errors.hpp"

namespace rtatl {

BasicBlock::BasicBlock(int cin, int cout, int stride, Rng& rng)
    : conv1(cin, cout, 3, stride, 1, false, rng),
      conv2(cout, cout, 3, 1, 1, false, rng),
      bn1(cout),
      bn2(cout) {
    if (stride != 1 || cin != cout) {
        has_down = true;
        down_conv = Conv2d(cin, cout, 1, stride, 0, false, rng);
        down_bn = BatchNorm2d(cout);
    }
}

Var BasicBlock::forward(const Var& x, bool training) {
    Var out = relu(bn1.forward(conv1.forward(x), training));
    out = bn2.forward(conv2.forward(out), training);
    Var skip = has_down ? down_bn.forward(down_conv.forward(x), training) : x;
    return relu(add(out, skip));
}

void BasicBlock::params(ParamMap& pm, const std::string& prefix) const {
    conv1.params(pm, prefix + ".conv1");
    conv2.params(pm, prefix + ".conv2");
    bn1.params(pm, prefix + ".bn1");
    bn2.params(pm, prefix + ".bn2");
    if (has_down) {
        down_conv.params(pm, prefix + ".down.conv");
        down_bn.params(pm, prefix + ".down.bn");
    }
}

void BasicBlock::buffers(BufferMap& bm, const std::string& prefix) {
    bn1.buffers(bm, prefix + ".bn1");
    bn2.buffers(bm, prefix + ".bn2");
    if (has_down) down_bn.buffers(bm, prefix + ".down.bn");
}

Trunk::Trunk(int width_, Rng& rng) : width(width_), conv1(3, width_, 7, 2, 3, false, rng), bn1(width_) {
    auto stage = [&](std::vector<BasicBlock>& layer, int cin, int cout, int stride) {
        layer.emplace_back(cin, cout, stride, rng);
        layer.emplace_back(cout, cout, 1, rng);
    };
    stage(layer1, width, width, 1);
    stage(layer2, width, 2 * width, 2);
    stage(layer3, 2 * width, 4 * width, 2);
    stage(layer4, 4 * width, 8 * width, 2);
}

Trunk::Stages Trunk::forward(const Var& images, bool training) {
    if (images.val().ndim() != 4 || images.shape()[1] != 3)
        throw ShapeError("trunk: expected [B,3,H,W], got " + shape_str(images.shape()));
    if (images.shape()[2] % 32 != 0 || images.shape()[3] % 32 != 0)
        throw ShapeError("trunk: input side must be divisible by 32");
    Var x = relu(bn1.forward(conv1.forward(images), training));
    x = maxpool2d(x, 3, 2, 1);
    Stages s;
    for (auto& b : layer1) x = b.forward(x, training);
    s.s1 = x;
    for (auto& b : layer2) x = b.forward(x, training);
    s.s2 = x;
    for (auto& b : layer3) x = b.forward(x, training);
    s.s3 = x;
    for (auto& b : layer4) x = b.forward(x, training);
    s.s4 = x;
    return s;
}

void Trunk::params(ParamMap& pm, const std::string& prefix) const {
    conv1.params(pm, prefix + ".conv1");
    bn1.params(pm, prefix + ".bn1");
    auto stage = [&](const std::vector<BasicBlock>& layer, const std::string& name) {
        for (size_t i = 0; i < layer.size(); ++i)
            layer[i].params(pm, prefix + "." + name + "." + std::to_string(i));
    };
    stage(layer1, "layer1");
    stage(layer2, "layer2");
    stage(layer3, "layer3");
    stage(layer4, "layer4");
}

void Trunk::buffers(BufferMap& bm, const std::string& prefix) {
    bn1.buffers(bm, prefix + ".bn1");
    auto stage = [&](std::vector<BasicBlock>& layer, const std::string& name) {
        for (size_t i = 0; i < layer.size(); ++i)
            layer[i].buffers(bm, prefix + "." + name + "." + std::to_string(i));
    };
    stage(layer1, "layer1");
    stage(layer2, "layer2");
    stage(layer3, "layer3");
    stage(layer4, "layer4");
}

Fusion::Fusion(int w, int cf_, Rng& rng)
    : cf(cf_),
      lat1(w, cf_, 1, 1, 0, true, rng),
      lat2(2 * w, cf_, 1, 1, 0, true, rng),
      lat3(4 * w, cf_, 1, 1, 0, true, rng),
      lat4(8 * w, cf_, 1, 1, 0, true, rng) {}

Var Fusion::forward(const Trunk::Stages& stages) const {
    if (stages.s1.shape()[1] != lat1.cin)
        throw ConfigError("fusion: stage channels do not match lateral projections");
    Var p4 = lat4.forward(stages.s4);
    Var p3 = add(lat3.forward(stages.s3), upsample2x_nearest(p4));
    Var p2 = add(lat2.forward(stages.s2), upsample2x_nearest(p3));
    return add(lat1.forward(stages.s1), upsample2x_nearest(p2));
}

void Fusion::params(ParamMap& pm, const std::string& prefix) const {
    lat1.params(pm, prefix + ".lat1");
    lat2.params(pm, prefix + ".lat2");
    lat3.params(pm, prefix + ".lat3");
    lat4.params(pm, prefix + ".lat4");
}

RoIBranch::RoIBranch(int cf, int mid, int d, Rng& rng)
    : conv1(cf, mid, 3, 1, 1, false, rng), conv2(mid, d, 3, 1, 1, false, rng), bn1(mid), bn2(d) {}

Var RoIBranch::forward(const Var& patches, bool training) {
    Var x = relu(bn1.forward(conv1.forward(patches), training));
    x = relu(bn2.forward(conv2.forward(x), training));
    return avgpool_global(x);  // "vectorized first by average pooling"
}

void RoIBranch::params(ParamMap& pm, const std::string& prefix) const {
    conv1.params(pm, prefix + ".conv1");
    conv2.params(pm, prefix + ".conv2");
    bn1.params(pm, prefix + ".bn1");
    bn2.params(pm, prefix + ".bn2");
}

void RoIBranch::buffers(BufferMap& bm, const std::string& prefix) {
    bn1.buffers(bm, prefix + ".bn1");
    bn2.buffers(bm, prefix + ".bn2");
}

PredictionHeads::PredictionHeads(int n_aus, int d, int g, Rng& rng) : global_head(g, n_aus, rng) {
    roi_heads.reserve(static_cast<size_t>(n_aus));
    for (int i = 0; i < n_aus; ++i) roi_heads.emplace_back(d, 1, rng);
}

Prediction PredictionHeads::forward(const std::vector<Var>& attended, const Var& global_vec) const {
    const int n = static_cast<int>(roi_heads.size());
    std::vector<Var> rows;
    rows.reserve(attended.size());
    for (const Var& per_au : attended) {
        if (per_au.shape() != Shape{n, static_cast<int>(roi_heads[0].in)})
            throw ShapeError("prediction: attended features must be [N,d]");
        std::vector<Var> logits;
        logits.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            logits.push_back(roi_heads[static_cast<size_t>(i)].forward(slice_rows(per_au, i, i + 1)));
        rows.push_back(transpose2d(concat_rows(logits)));  // [1,N]
    }
    Prediction out;
    out.probs_roi = sigmoid(concat_rows(rows));
    out.probs_global = sigmoid(global_head.forward(global_vec));
    out.probs_fused = emax(out.probs_global, out.probs_roi);
    return out;
}

void PredictionHeads::params(ParamMap& pm, const std::string& prefix) const {
    for (size_t i = 0; i < roi_heads.size(); ++i)
        roi_heads[i].params(pm, prefix + ".roi" + std::to_string(i));
    global_head.params(pm, prefix + ".global");
}

std::vector<RoiBox> roi_boxes_for_batch(const std::vector<Tensor>& centers_per_sample,
                                        const AUSpec& spec, int image_size, int feat_size) {
    const double stride = static_cast<double>(image_size) / feat_size;
    const double half = spec.patch_size / 2.0;
    std::vector<RoiBox> boxes;
    boxes.reserve(centers_per_sample.size() * static_cast<size_t>(spec.n_aus()) * 2);
    for (int au = 0; au < spec.n_aus(); ++au)
        for (size_t b = 0; b < centers_per_sample.size(); ++b)
            for (int side = 0; side < 2; ++side) {
                const Tensor& c = centers_per_sample[b];
                RoiBox box;
                box.b = static_cast<int>(b);
                box.x0 = (c.at(au, side, 0) - half) / stride;
                box.x1 = (c.at(au, side, 0) + half) / stride;
                box.y0 = (c.at(au, side, 1) - half) / stride;
                box.y1 = (c.at(au, side, 1) + half) / stride;
                boxes.push_back(box);
            }
    return boxes;
}

}  // namespace rtatl
