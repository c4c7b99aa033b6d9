#include "rtatl/roii.hpp"

#include <cmath>

#include "rtatl/errors.hpp"

namespace rtatl {

Generator::Generator(int d_, int patch_size, const std::vector<int>& channels, Rng& rng)
    : d(d_), s(patch_size) {
    const int levels = static_cast<int>(channels.size());
    const int k0 = patch_size >> levels;
    if (k0 < 1 || (k0 << levels) != patch_size)
        throw ConfigError("generator: patch_size must be 2^len(gen_channels) * k0");
    ups.emplace_back(d, channels[0], k0, 1, 0, false, rng);
    bns.emplace_back(channels[0]);
    for (int i = 1; i < levels; ++i) {
        ups.emplace_back(channels[i - 1], channels[i], 4, 2, 1, false, rng);
        bns.emplace_back(channels[i]);
    }
    ups.emplace_back(channels[levels - 1], 3, 4, 2, 1, true, rng);
}

Var Generator::forward(const Var& x, bool training) {
    if (x.val().ndim() != 2 || x.shape()[1] != d)
        throw ShapeError("generator: expected [n,d], got " + shape_str(x.shape()));
    ++calls;
    const int n = x.shape()[0];
    Var t = reshape(x, {n, d, 1, 1});
    for (size_t i = 0; i + 1 < ups.size(); ++i)
        t = relu(bns[i].forward(ups[i].forward(t), training));
    return sigmoid(ups.back().forward(t));
}

void Generator::params(ParamMap& pm, const std::string& prefix) const {
    for (size_t i = 0; i < ups.size(); ++i) ups[i].params(pm, prefix + ".up" + std::to_string(i));
    for (size_t i = 0; i < bns.size(); ++i) bns[i].params(pm, prefix + ".bn" + std::to_string(i));
}

void Generator::buffers(BufferMap& bm, const std::string& prefix) {
    for (size_t i = 0; i < bns.size(); ++i) bns[i].buffers(bm, prefix + ".bn" + std::to_string(i));
}

PatchCritic::PatchCritic(int patch_size, const std::vector<int>& channels, Rng& rng) : s(patch_size) {
    const int levels = static_cast<int>(channels.size());
    const int k_final = patch_size >> levels;
    if (k_final < 1) throw ConfigError("critic: too many halvings for patch_size");
    downs.emplace_back(3, channels[0], 4, 2, 1, true, rng);
    for (int i = 1; i < levels; ++i) {
        downs.emplace_back(channels[i - 1], channels[i], 4, 2, 1, false, rng);
        bns.emplace_back(channels[i]);
    }
    final_conv = Conv2d(channels[levels - 1], 1, k_final, 1, 0, true, rng);
}

Var PatchCritic::forward(const Var& patches, bool training) {
    if (patches.val().ndim() != 4 || patches.shape()[1] != 3 || patches.shape()[2] != s ||
        patches.shape()[3] != s)
        throw ShapeError("critic: expected [n,3," + std::to_string(s) + "," + std::to_string(s) +
                         "], got " + shape_str(patches.shape()));
    ++calls;
    const int n = patches.shape()[0];
    Var t = leaky_relu(downs[0].forward(patches));
    for (size_t i = 1; i < downs.size(); ++i)
        t = leaky_relu(bns[i - 1].forward(downs[i].forward(t), training));
    Var logit = final_conv.forward(t);  // [n,1,1,1]
    return sigmoid(reshape(logit, {n}));
}

void PatchCritic::params(ParamMap& pm, const std::string& prefix) const {
    for (size_t i = 0; i < downs.size(); ++i) downs[i].params(pm, prefix + ".conv" + std::to_string(i));
    for (size_t i = 0; i < bns.size(); ++i) bns[i].params(pm, prefix + ".bn" + std::to_string(i));
    final_conv.params(pm, prefix + ".final");
}

void PatchCritic::buffers(BufferMap& bm, const std::string& prefix) {
    for (size_t i = 0; i < bns.size(); ++i) bns[i].buffers(bm, prefix + ".bn" + std::to_string(i));
}

namespace {

Var mean_log(const Var& probs) { return mean_all(log_v(clamp(probs, kLogEps, 1.0 - kLogEps))); }

Var bce_against(const Var& probs, const std::vector<int>& y) {
    if (static_cast<size_t>(probs.val().numel()) != y.size())
        throw ShapeError("bce: output/label count mismatch");
    Tensor pos(probs.shape()), negt(probs.shape());
    for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw DataError("semantic labels must be binary");
        pos.v[i] = static_cast<double>(y[i]);
        negt.v[i] = 1.0 - pos.v[i];
    }
    Var cp = clamp(probs, kLogEps, 1.0 - kLogEps);
    Var term_pos = mul_const(log_v(cp), pos);
    Var term_neg = mul_const(log_v(sub(Var(Tensor(cp.shape(), 1.0)), cp)), negt);
    return neg(mean_all(add(term_pos, term_neg)));
}

}  // namespace

std::pair<Var, Var> adversarial_losses(const Var& d_real, const Var& d_fake) {
    Var one(Tensor(d_fake.shape(), 1.0));
    Var l_adv = add(mean_log(d_real), mean_all(log_v(clamp(sub(one, d_fake), kLogEps, 1.0 - kLogEps))));
    Var l_adv_g = neg(mean_log(d_fake));
    return {l_adv, l_adv_g};
}

Var reconstruction_loss(const Var& p, const Var& g) {
    if (p.shape() != g.shape())
        throw ShapeError("reconstruction_loss: " + shape_str(p.shape()) + " vs " + shape_str(g.shape()));
    const int n = p.shape()[0];
    return scale(sum_all(abs_v(sub(p, g))), 1.0 / n);
}

Var semantic_loss(const Var& c_out, const std::vector<int>& y_hat) { return bce_against(c_out, y_hat); }

int pseudo_label(const Tensor& probs_fused, int au_index, double threshold) {
    return probs_fused.v[static_cast<size_t>(au_index)] >= threshold ? 1 : 0;
}

std::optional<RoIILosses> roii_step(Generator& gen, Discriminator& disc, Classifier& cls,
                                    const RoIIBatch& batch, double lambda1, double lambda2,
                                    bool training) {
    if (!batch.x.defined() || batch.x.shape()[0] == 0) return std::nullopt;
    Var fake = gen.forward(batch.x, training);
    Var d_real = disc.forward(batch.p, training);
    Var d_fake = disc.forward(fake, training);
    auto [l_adv, l_adv_g] = adversarial_losses(d_real, d_fake);
    Var l_rec = reconstruction_loss(batch.p, fake);
    Var l_c = semantic_loss(cls.forward(batch.p, training), batch.y_hat);
    Var l_c_g = semantic_loss(cls.forward(fake, training), batch.y_hat);

    RoIILosses out;
    out.l_adv = l_adv.item();
    out.l_adv_g = l_adv_g.item();
    out.l_rec = l_rec.item();
    out.l_c = l_c.item();
    out.l_c_g = l_c_g.item();
    out.l_d = -out.l_adv;
    out.l_g = lambda1 * out.l_adv_g + (1.0 - lambda1) * out.l_rec + lambda2 * out.l_c_g;
    return out;
}

}  // namespace rtatl
