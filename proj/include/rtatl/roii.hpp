#pragma once

#include <optional>

#include "rtatl/config.hpp"
#include "rtatl/layers.hpp"

namespace rtatl {

// Numerical floor for every log argument in the adversarial and semantic
// losses.
constexpr double kLogEps = 1e-7;

// G: R^d -> [0,1]^{3 x s x s}. A 1x1xd seed through a ladder of transposed
// convolutions: first layer expands to k0 = s / 2^len(channels), each later
// layer doubles the side.
struct Generator {
    int d = 0, s = 0;
    std::vector<ConvTranspose2d> ups;
    std::vector<BatchNorm2d> bns;
    mutable long long calls = 0;

    Generator() = default;
    Generator(int d, int patch_size, const std::vector<int>& channels, Rng& rng);
    Var forward(const Var& x, bool training);  // [n,d] -> [n,3,s,s]
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

// D and C share the conv-ladder shape: halvings until the side reaches
// s / 2^len(channels), then one full-kernel conv to a single logit.
struct PatchCritic {
    int s = 0;
    std::vector<Conv2d> downs;
    std::vector<BatchNorm2d> bns;
    Conv2d final_conv;
    mutable long long calls = 0;

    PatchCritic() = default;
    PatchCritic(int patch_size, const std::vector<int>& channels, Rng& rng);
    Var forward(const Var& patches, bool training);  // [n,3,s,s] -> [n] probabilities
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix);
};

using Discriminator = PatchCritic;
using Classifier = PatchCritic;

struct RoIIBatch {
    Var x;                    // [n,d] attended features of the cropped sides
    Var p;                    // [n,3,s,s] original patches
    std::vector<int> y_hat;   // binary semantic labels, one per pair
};

struct RoIILosses {
    double l_adv = 0, l_adv_g = 0, l_rec = 0, l_c = 0, l_c_g = 0, l_d = 0, l_g = 0;
};

// E[log D(p)] + E[log(1 - D(fake))] and the non-saturating generator form
// -E[log D(fake)]; logs clamped to [eps, 1-eps].
std::pair<Var, Var> adversarial_losses(const Var& d_real, const Var& d_fake);

// Mean over the batch of the per-patch L1 distance (sum over pixels/channels).
Var reconstruction_loss(const Var& p, const Var& g);

// Binary cross-entropy of critic outputs against the semantic labels.
Var semantic_loss(const Var& c_out, const std::vector<int>& y_hat);

// 1 iff probs_fused[au_index] >= threshold (boundary inclusive).
int pseudo_label(const Tensor& probs_fused, int au_index, double threshold);

// Full loss report for one batch (no optimizer steps); empty batch -> nullopt.
std::optional<RoIILosses> roii_step(Generator& gen, Discriminator& disc, Classifier& cls,
                                    const RoIIBatch& batch, double lambda1, double lambda2,
                                    bool training = true);

}  // namespace rtatl
