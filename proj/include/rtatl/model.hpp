#pragma once

#include <string>
#include <vector>

#include "rtatl/backbone.hpp"
#include "rtatl/config.hpp"
#include "rtatl/dataset.hpp"
#include "rtatl/ofe.hpp"
#include "rtatl/roii.hpp"
#include "rtatl/transformer.hpp"

namespace rtatl {

// The assembled network. The inference path (forward/predict) touches only
// trunk, fusion, RoI branches, transformer and prediction heads; generator,
// discriminator, classifier and flow head carry call counters so tests can
// prove they stay cold.
class Model {
public:
    Model(const AUSpec& spec, const HyperParams& hp, uint64_t seed);

    struct Forward {
        FeatureBundle bundle;
        std::vector<AttentionOutput> attended;  // per sample
        Prediction pred;
    };

    // images: [B,3,in,in]; centers: per-sample [N,2,2] in image coordinates.
    Forward forward(const Var& images, const std::vector<Tensor>& centers, bool training);

    // Gradient-free eval-mode forward; never executes the auxiliary heads.
    Prediction predict(const Tensor& images, const std::vector<Tensor>& centers);

    const AUSpec& spec() const { return spec_; }
    const HyperParams& hp() const { return hp_; }

    ParamMap backbone_params() const;  // the inference-time parameter set
    ParamMap main_params() const;      // backbone + generator + flow head
    ParamMap dc_params() const;        // discriminator + classifier
    ParamMap all_params() const;
    BufferMap all_buffers();

    long long count_parameters(bool training_mode) const;
    long long aux_calls() const { return gen.calls + disc.calls + cls.calls + ofe.calls; }
    void reset_aux_calls() { gen.calls = disc.calls = cls.calls = ofe.calls = 0; }

    Trunk trunk;
    Fusion fusion;
    std::vector<RoIBranch> branches;  // one per AU
    RelationTransformer rel;
    PredictionHeads heads;
    Generator gen;
    Discriminator disc;
    Classifier cls;
    FlowHead ofe;

private:
    AUSpec spec_;
    HyperParams hp_;
};

// Binary checkpoint: header with a config hash, then named tensors (params
// and buffers). Loading refuses a mismatched config hash or any name/shape
// disagreement.
void save_checkpoint(const std::string& path, Model& model);
void load_checkpoint(const std::string& path, Model& model);
std::string checkpoint_hash(const std::string& path);  // peek without loading

// Warm-start just the trunk from any checkpoint whose trunk tensors match in
// shape; the rest of the model keeps its fresh initialization. Returns the
// number of tensors copied.
size_t load_trunk_checkpoint(const std::string& path, Model& model);

}  // namespace rtatl
