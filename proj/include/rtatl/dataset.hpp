#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rtatl/config.hpp"
#include "rtatl/image.hpp"
#include "rtatl/layers.hpp"
#include "rtatl/tensor.hpp"

namespace rtatl {

// Pixel box [x0,x1) x [y0,y1) in the current image coordinates.
struct PixelBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool overlaps(const PixelBox& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
    bool operator==(const PixelBox&) const = default;
};

struct MaskDescriptor {
    int au_index = -1;
    std::array<PixelBox, 2> boxes;   // left, right
    std::array<Tensor, 2> patches;   // [3,s,s] pre-fill pixels of each box
    std::set<int> excluded_au_indices;
};

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    std::optional<std::vector<int>> labels;
    std::optional<Landmarks> landmarks;
    std::optional<Tensor> flow_target;  // [2,h,w], same spatial size as image
    std::optional<MaskDescriptor> mask;
    std::string subject_id;
    int frame_index = 0;
    bool is_labeled = false;
};

struct FlowPair {
    Image frame_t;
    Image frame_t3;  // warped with frame_t's alignment transform
    Tensor flow;     // [2,h,w] full-resolution displacement
};

// Pluggable flow target source; the reference TV-L1 solver is out of scope,
// targets come from files or from a provider implementation.
class FlowProvider {
public:
    virtual ~FlowProvider() = default;
    virtual Tensor compute(const Image& frame_t, const Image& frame_t3) const = 0;
};

// Exhaustive integer block search with parabolic sub-pixel refinement;
// handles the small near-rigid displacements of aligned face pairs.
class BlockMatchingFlow : public FlowProvider {
public:
    explicit BlockMatchingFlow(int block = 12, int search = 6) : block_(block), search_(search) {}
    Tensor compute(const Image& frame_t, const Image& frame_t3) const override;

private:
    int block_, search_;
};

// ---- operations ----

// Similarity alignment moving the eye anchors onto canonical positions
// (x = 0.3/0.7, y = 0.4 of the aligned side length).
std::pair<Image, Affine> align_face(const Image& raw, const Landmarks& lms, int aligned_size,
                                    const AUSpec& spec);
Affine align_transform(const Landmarks& lms, int aligned_size, const AUSpec& spec);

// Per-AU left/right centers, clamped so the s x s box stays inside the image.
// Returns [N,2,2] with the innermost axis (x,y).
Tensor compute_au_centers(const Landmarks& lms, const AUSpec& spec, int image_size);
PixelBox box_from_center(double cx, double cy, int s, int image_size);

FlowPair prepare_flow_target(const Image& frame_t_raw, const Image& frame_t3_raw,
                             const Affine& transform_t, int aligned_size,
                             const FlowProvider& provider);

// Area-average downsample with displacement rescale; scale is normally
// target_hw / source_hw so values stay in units of the target resolution.
Tensor downsample_flow(const Tensor& flow, int target_hw, double scale);

// Random crop + horizontal flip (training) or center crop (eval), applied
// consistently to image, landmarks, flow and mask geometry.
Sample augment(const Sample& s, const HyperParams& hp, Rng& rng, bool training = true);
Sample augment_with(const Sample& s, const HyperParams& hp, int off_x, int off_y, bool flip);

// Crop the symmetric RoIs of one uniformly chosen AU, fill white, and record
// every AU whose RoI overlaps the erased area.
Sample apply_roi_mask(const Sample& s, const AUSpec& spec, Rng& rng);
Sample apply_roi_mask_at(const Sample& s, const AUSpec& spec, int au_index);

// ---- synthetic corpus ----

struct SynthItem {
    Image image;  // raw canvas at aligned_size, eyes near canonical + drift
    Landmarks landmarks;
    std::vector<int> labels;
    std::string subject_id;
    int frame_index = 0;
    Tensor flow;  // analytic displacement to frame +flow_step; empty when none
};

std::vector<SynthItem> synth_dataset(uint64_t seed, int n_subjects, int frames_per_subject,
                                     const AUSpec& spec, const HyperParams& hp);

// Render one frame with explicit labels and rigid drift; the AU markers land
// on the RoI centers so label evidence stays inside the RoI boxes.
SynthItem synth_render_frame(const AUSpec& spec, const HyperParams& hp,
                             const std::vector<int>& labels, double offset_x, double offset_y);
std::vector<Sample> synth_to_samples(const std::vector<SynthItem>& items, const AUSpec& spec,
                                     const HyperParams& hp, bool keep_labels = true,
                                     bool keep_flow = true);

// ---- manifest-driven loading ----

Landmarks read_landmarks(const std::string& path);
void write_landmarks(const std::string& path, const Landmarks& lms);

struct ManifestRow {
    std::string path;
    std::string subject_id;
    int frame_index = 0;
    std::vector<int> labels;  // empty = unlabeled
};

std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Loads, aligns and attaches flow targets (from "<image>.flo" files, or the
// provider when given). Samples stay at aligned_size; augment() crops them.
std::vector<Sample> load_dataset(const std::string& manifest_path, const AUSpec& spec,
                                 const HyperParams& hp, const std::string& data_root,
                                 bool want_flow, const FlowProvider* provider = nullptr);

}  // namespace rtatl
