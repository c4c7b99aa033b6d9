#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace rtatl {

// RoI center rule: landmark index plus an offset measured in units of half
// the inter-ocular distance, so box geometry scales with face size.
struct RoiRule {
    int landmark = 0;
    double dx = 0.0, dy = 0.0;
    bool operator==(const RoiRule&) const = default;
};

struct AUSpec {
    std::string dataset_name;
    std::vector<int> au_ids;
    int patch_size = 48;  // s, side of the square RoI in aligned pixels
    std::optional<int> positive_intensity_threshold;
    int anchor_left = 0;   // landmark indices of the eye anchors
    int anchor_right = 1;
    std::vector<std::array<RoiRule, 2>> roi_rules;  // [N][left=0,right=1]

    int n_aus() const { return static_cast<int>(au_ids.size()); }
    int au_index(int au_id) const;  // -1 when absent
    bool operator==(const AUSpec&) const = default;
};

// Channel plan for the network; defaults reproduce the full-scale model,
// small configs override them for desk-scale runs.
struct ModelDims {
    int trunk_width = 64;
    int fused_channels = 128;
    int roi_mid_channels = 256;
    int roi_patch_cells = 6;
    std::vector<int> gen_channels = {1024, 512, 256, 128};
    std::vector<int> disc_channels = {128, 256, 512, 1024};
    int ofe_mid_channels = 512;
    bool operator==(const ModelDims&) const = default;
};

struct HyperParams {
    int d = 128;
    int heads = 8;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double lambda_f = 0.2;
    double lr = 0.0003;
    int input_size = 192;
    int aligned_size = 200;
    int flow_step = 3;
    double pseudo_threshold = 0.5;
    double mask_fraction = 0.5;
    int batch_size = 8;
    ModelDims dims;
    bool operator==(const HyperParams&) const = default;
};

std::pair<AUSpec, HyperParams> load_config(const std::string& path);
std::pair<AUSpec, HyperParams> load_config_string(const std::string& text);
std::string serialize_config(const AUSpec& spec, const HyperParams& hp);
std::string config_hash(const AUSpec& spec, const HyperParams& hp);  // fnv1a-64 hex

void validate_config(const AUSpec& spec, const HyperParams& hp);

// 1 iff intensity > threshold. Requires the AUSpec to declare a threshold.
int binarize_intensity(int intensity, const AUSpec& spec);

}  // namespace rtatl
