#include "rtatl/model.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>

#include "rtatl/errors.hpp"

namespace rtatl {

Model::Model(const AUSpec& spec, const HyperParams& hp, uint64_t seed) : spec_(spec), hp_(hp) {
    validate_config(spec, hp);
    Rng rng(seed);
    const ModelDims& md = hp.dims;
    trunk = Trunk(md.trunk_width, rng);
    fusion = Fusion(md.trunk_width, md.fused_channels, rng);
    for (int i = 0; i < spec.n_aus(); ++i)
        branches.emplace_back(md.fused_channels, md.roi_mid_channels, hp.d, rng);
    rel = RelationTransformer(hp.d, hp.heads, spec.n_aus(), 2 * hp.d, rng);
    heads = PredictionHeads(spec.n_aus(), hp.d, 8 * md.trunk_width, rng);
    gen = Generator(hp.d, spec.patch_size, md.gen_channels, rng);
    disc = Discriminator(spec.patch_size, md.disc_channels, rng);
    cls = Classifier(spec.patch_size, md.disc_channels, rng);
    ofe = FlowHead(8 * md.trunk_width, md.ofe_mid_channels, rng);
}

Model::Forward Model::forward(const Var& images, const std::vector<Tensor>& centers, bool training) {
    const int B = images.shape()[0];
    if (static_cast<size_t>(B) != centers.size())
        throw ShapeError("model forward: need one center set per sample");
    const int in_size = images.shape()[2];
    const int N = spec_.n_aus();
    const int p = hp_.dims.roi_patch_cells;

    Forward out;
    Trunk::Stages stages = trunk.forward(images, training);
    out.bundle.global_maps = stages.s4;
    out.bundle.fused_maps = fusion.forward(stages);
    out.bundle.global_vec = avgpool_global(stages.s4);

    const int feat_size = out.bundle.fused_maps.shape()[2];
    std::vector<RoiBox> boxes = roi_boxes_for_batch(centers, spec_, in_size, feat_size);
    Var patches = roi_crop_bilinear(out.bundle.fused_maps, boxes, p);  // [N*B*2,cf,p,p]

    // per-AU branches over that AU's group of B*2 patches
    std::vector<Var> branch_out;  // [B*2, d] each
    branch_out.reserve(static_cast<size_t>(N));
    for (int au = 0; au < N; ++au)
        branch_out.push_back(
            branches[static_cast<size_t>(au)].forward(slice_dim0(patches, au * B * 2, (au + 1) * B * 2), training));

    out.bundle.roi_tokens.reserve(static_cast<size_t>(B));
    out.attended.reserve(static_cast<size_t>(B));
    std::vector<Var> per_au_list;
    per_au_list.reserve(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        std::vector<Var> rows;
        rows.reserve(static_cast<size_t>(N));
        for (int au = 0; au < N; ++au)
            rows.push_back(slice_rows(branch_out[static_cast<size_t>(au)], b * 2, b * 2 + 2));
        Var tokens = concat_rows(rows);  // [2N,d]
        out.bundle.roi_tokens.push_back(tokens);
        out.attended.push_back(rel.forward(tokens));
        per_au_list.push_back(out.attended.back().per_au);
    }
    out.pred = heads.forward(per_au_list, out.bundle.global_vec);
    return out;
}

Prediction Model::predict(const Tensor& images, const std::vector<Tensor>& centers) {
    NoGradGuard ng;
    Forward f = forward(Var(images), centers, /*training=*/false);
    return f.pred;
}

ParamMap Model::backbone_params() const {
    ParamMap pm;
    trunk.params(pm, "trunk");
    fusion.params(pm, "fusion");
    for (size_t i = 0; i < branches.size(); ++i) branches[i].params(pm, "branch" + std::to_string(i));
    rel.params(pm, "rel");
    heads.params(pm, "heads");
    return pm;
}

ParamMap Model::main_params() const {
    ParamMap pm = backbone_params();
    gen.params(pm, "gen");
    ofe.params(pm, "ofe");
    return pm;
}

ParamMap Model::dc_params() const {
    ParamMap pm;
    disc.params(pm, "disc");
    cls.params(pm, "cls");
    return pm;
}

ParamMap Model::all_params() const {
    ParamMap pm = main_params();
    ParamMap dc = dc_params();
    for (auto& [name, v] : dc.items) pm.add(name, v);
    return pm;
}

BufferMap Model::all_buffers() {
    BufferMap bm;
    trunk.buffers(bm, "trunk");
    for (size_t i = 0; i < branches.size(); ++i) branches[i].buffers(bm, "branch" + std::to_string(i));
    gen.buffers(bm, "gen");
    disc.buffers(bm, "disc");
    cls.buffers(bm, "cls");
    ofe.buffers(bm, "ofe");
    return bm;
}

long long Model::count_parameters(bool training_mode) const {
    return training_mode ? all_params().count() : backbone_params().count();
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kCkptMagic[] = "RTCK1";

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    const uint32_t nlen = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&nlen), 4);
    out.write(name.data(), nlen);
    const uint32_t nd = static_cast<uint32_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d : t.shape) {
        const int32_t v = d;
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.v.size() * 8));
}

bool read_tensor(std::ifstream& in, std::string& name, Tensor& t) {
    uint32_t nlen = 0;
    if (!in.read(reinterpret_cast<char*>(&nlen), 4)) return false;
    name.resize(nlen);
    in.read(name.data(), nlen);
    uint32_t nd = 0;
    in.read(reinterpret_cast<char*>(&nd), 4);
    Shape s(nd);
    for (uint32_t i = 0; i < nd; ++i) {
        int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        s[i] = v;
    }
    t = Tensor(s);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.v.size() * 8));
    return static_cast<bool>(in);
}
}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << kCkptMagic << "\n" << config_hash(model.spec(), model.hp()) << "\n";
    ParamMap pm = model.all_params();
    BufferMap bm = model.all_buffers();
    const uint32_t count = static_cast<uint32_t>(pm.items.size() + bm.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (auto& [name, v] : pm.items) write_tensor(out, "p:" + name, v.val());
    for (auto& [name, t] : bm) write_tensor(out, "b:" + name, *t);
}

std::string checkpoint_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::string magic, hash;
    std::getline(in, magic);
    std::getline(in, hash);
    if (magic != kCkptMagic) throw DataError("'" + path + "' is not a checkpoint file");
    return hash;
}

size_t load_trunk_checkpoint(const std::string& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::string magic, hash;
    std::getline(in, magic);
    std::getline(in, hash);
    if (magic != kCkptMagic) throw DataError("'" + path + "' is not a checkpoint file");

    ParamMap pm;
    model.trunk.params(pm, "trunk");
    BufferMap bm;
    model.trunk.buffers(bm, "trunk");
    std::map<std::string, Var> params;
    for (auto& [name, v] : pm.items) params.emplace("p:" + name, v);
    std::map<std::string, Tensor*> buffers;
    for (auto& [name, t] : bm) buffers.emplace("b:" + name, t);

    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    size_t loaded = 0;
    std::string name;
    Tensor t;
    while (read_tensor(in, name, t)) {
        if (auto it = params.find(name); it != params.end() && it->second.val().shape == t.shape) {
            it->second.val_mut() = std::move(t);
            ++loaded;
        } else if (auto bt = buffers.find(name); bt != buffers.end() && bt->second->shape == t.shape) {
            *bt->second = std::move(t);
            ++loaded;
        }
    }
    if (loaded == 0) throw DataError("checkpoint '" + path + "' holds no matching trunk tensors");
    return loaded;
}

void load_checkpoint(const std::string& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::string magic, hash;
    std::getline(in, magic);
    std::getline(in, hash);
    if (magic != kCkptMagic) throw DataError("'" + path + "' is not a checkpoint file");
    const std::string want = config_hash(model.spec(), model.hp());
    if (hash != want)
        throw ConfigError("checkpoint '" + path + "' was trained with a different config (hash " + hash +
                          ", expected " + want + ")");

    ParamMap pm = model.all_params();
    BufferMap bm = model.all_buffers();
    std::map<std::string, Var> params;
    for (auto& [name, v] : pm.items) params.emplace("p:" + name, v);
    std::map<std::string, Tensor*> buffers;
    for (auto& [name, t] : bm) buffers.emplace("b:" + name, t);

    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    size_t loaded = 0;
    std::string name;
    Tensor t;
    while (read_tensor(in, name, t)) {
        if (auto it = params.find(name); it != params.end()) {
            if (it->second.val().shape != t.shape)
                throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                                ", model expects " + shape_str(it->second.val().shape));
            it->second.val_mut() = std::move(t);
            ++loaded;
        } else if (auto bt = buffers.find(name); bt != buffers.end()) {
            if (bt->second->shape != t.shape)
                throw DataError("checkpoint buffer '" + name + "' shape mismatch");
            *bt->second = std::move(t);
            ++loaded;
        } else {
            throw DataError("checkpoint tensor '" + name + "' does not exist in the model");
        }
    }
    if (loaded != params.size() + buffers.size() || loaded != count)
        throw DataError("checkpoint '" + path + "' is incomplete (" + std::to_string(loaded) + " of " +
                        std::to_string(params.size() + buffers.size()) + " tensors)");
}

}  // namespace rtatl
