// Command-line entry points: training, evaluation and the three
// visualization outputs (flow panels, inpainting grids, relation heatmaps).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rtatl/dataset.hpp"
#include "rtatl/errors.hpp"
#include "rtatl/flow_io.hpp"
#include "rtatl/model.hpp"
#include "rtatl/png_io.hpp"
#include "rtatl/train.hpp"
#include "rtatl/viz.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rtatl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitMissingFile = 2;

std::string resolve(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    const char* root = std::getenv("RTATL_DATA_ROOT");
    if (root && *root && !fs::exists(path)) {
        const std::string joined = (fs::path(root) / path).string();
        if (fs::exists(joined)) return joined;
    }
    return path;
}

std::string require_file(const std::string& path, const std::string& what) {
    const std::string r = resolve(path);
    if (!fs::exists(r)) {
        std::cerr << "rtatl: " << what << " not found: '" << path << "'\n";
        std::exit(kExitMissingFile);
    }
    return r;
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const std::string& config_path, uint64_t seed, const AUSpec& spec,
                        const HyperParams& hp) {
    json j;
    j["command"] = command;
    j["config"] = config_path;
    j["seed"] = seed;
    j["out"] = out_dir;
    j["config_hash"] = config_hash(spec, hp);
    std::ofstream f(out_dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

std::vector<Tensor> centers_for(const std::vector<Sample>& batch, const AUSpec& spec, int size) {
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (const Sample& s : batch) out.push_back(compute_au_centers(*s.landmarks, spec, size));
    return out;
}

Tensor stack_images(const std::vector<Sample>& samples) {
    const Shape s = samples[0].image.shape;
    Tensor out(Shape{static_cast<int>(samples.size()), s[0], s[1], s[2]});
    double* dst = out.data();
    for (const Sample& smp : samples) {
        std::copy(smp.image.v.begin(), smp.image.v.end(), dst);
        dst += smp.image.v.size();
    }
    return out;
}

struct CommonArgs {
    std::string config;
    std::string out = "rtatl_out";
    uint64_t seed = 1;
    bool emit_json = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_json = false) {
    cmd->add_option("--config", a.config, "dataset config file")->required();
    cmd->add_option("--out", a.out, "output directory");
    cmd->add_option("--seed", a.seed, "RNG seed");
    if (with_json) cmd->add_flag("--json", a.emit_json, "emit machine-readable JSON to stdout");
}

int cmd_synth(const CommonArgs& a, int subjects, int frames, int unlabeled_subjects) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    fs::create_directories(a.out);

    auto items = synth_dataset(a.seed, subjects, frames, spec, hp);
    std::vector<ManifestRow> rows;
    for (const SynthItem& it : items) {
        const std::string rel = it.subject_id + "_f" + std::to_string(it.frame_index) + ".png";
        write_png(a.out + "/" + rel, it.image);
        write_landmarks(a.out + "/" + rel + ".lms", it.landmarks);
        if (!it.flow.empty()) {
            // targets are stored in aligned coordinates, one file per frame pair
            write_flo(a.out + "/" + rel + ".flo", it.flow);
        }
        rows.push_back({rel, it.subject_id, it.frame_index, it.labels});
    }
    write_manifest(a.out + "/train.csv", rows);

    if (unlabeled_subjects > 0) {
        auto uitems = synth_dataset(a.seed + 7919, unlabeled_subjects, 1, spec, hp);
        std::vector<ManifestRow> urows;
        for (const SynthItem& it : uitems) {
            const std::string rel = "u_" + it.subject_id + ".png";
            write_png(a.out + "/" + rel, it.image);
            write_landmarks(a.out + "/" + rel + ".lms", it.landmarks);
            urows.push_back({rel, "u_" + it.subject_id, 0, {}});
        }
        write_manifest(a.out + "/unlabeled.csv", urows);
    }
    write_run_manifest(a.out, "synth", a.config, a.seed, spec, hp);
    std::cout << "wrote " << rows.size() << " labeled frames to " << a.out << "\n";
    return kExitOk;
}

int cmd_train(const CommonArgs& a, const std::string& labeled, const std::string& unlabeled,
              int steps, int fold, int folds, bool dry_run, int patience, int eval_every,
              const std::string& init_trunk) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    fs::create_directories(a.out);
    write_run_manifest(a.out, "train", a.config, a.seed, spec, hp);

    Model model(spec, hp, a.seed);
    if (!init_trunk.empty()) {
        const size_t n = load_trunk_checkpoint(require_file(init_trunk, "trunk checkpoint"), model);
        std::cout << "warm-started " << n << " trunk tensors from " << init_trunk << "\n";
    }
    Trainer trainer(model, a.seed + 1);

    if (dry_run) {
        auto items = synth_dataset(a.seed, 2, hp.flow_step + 1, spec, hp);
        auto samples = synth_to_samples(items, spec, hp);
        LossReport rep = trainer.train_step(samples, {});
        std::cout << "dry run ok: total=" << rep.total << " l_sup=" << rep.l_sup << " l_d=" << rep.l_d
                  << " l_g=" << rep.l_g << " l_f=" << rep.l_f << "\n";
        return kExitOk;
    }

    const std::string lab_path = require_file(labeled, "labeled manifest");
    const std::string lab_root = fs::path(lab_path).parent_path().string();
    BlockMatchingFlow provider;
    auto all_labeled = load_dataset(lab_path, spec, hp, lab_root, true, &provider);

    std::vector<Sample> unlabeled_samples;
    if (!unlabeled.empty()) {
        const std::string unlab_path = require_file(unlabeled, "unlabeled manifest");
        unlabeled_samples = load_dataset(unlab_path, spec, hp, fs::path(unlab_path).parent_path().string(),
                                         true, &provider);
    }

    // subject-independent fold selection
    std::vector<Sample> train_set, val_set;
    if (fold >= 0) {
        std::set<std::string> subjects;
        for (const Sample& s : all_labeled) subjects.insert(s.subject_id);
        auto splits = make_folds({subjects.begin(), subjects.end()}, folds, a.seed);
        if (fold >= static_cast<int>(splits.size())) {
            std::cerr << "rtatl: fold " << fold << " out of range (k=" << folds << ")\n";
            return kExitError;
        }
        std::set<std::string> test_subj(splits[static_cast<size_t>(fold)].begin(),
                                        splits[static_cast<size_t>(fold)].end());
        for (const Sample& s : all_labeled)
            (test_subj.count(s.subject_id) ? val_set : train_set).push_back(s);
    } else {
        train_set = all_labeled;
    }
    if (train_set.empty()) {
        std::cerr << "rtatl: no training samples after the fold split\n";
        return kExitError;
    }

    std::ofstream csv(a.out + "/metrics.csv");
    csv << "step,l_sup,l_d,l_g,l_f,total\n";
    double best_f1 = -1.0;
    int bad_evals = 0;
    const std::string ckpt_path = a.out + "/model.ckpt";
    for (int step = 0; step < steps; ++step) {
        // one-step run keeps the CSV streaming and early stopping simple
        auto reps = trainer.run(train_set, unlabeled_samples, 1);
        const LossReport& rep = reps[0];
        csv << step << "," << rep.l_sup << "," << rep.l_d << "," << rep.l_g << "," << rep.l_f << ","
            << rep.total << "\n";
        if (patience > 0 && !val_set.empty() && (step + 1) % eval_every == 0) {
            FoldResult r = trainer.evaluate(val_set, fold);
            std::cout << "step " << step + 1 << " val avg F1 " << r.avg_f1 << "\n";
            if (r.avg_f1 > best_f1) {
                best_f1 = r.avg_f1;
                bad_evals = 0;
                save_checkpoint(ckpt_path, model);
            } else if (++bad_evals >= patience) {
                std::cout << "early stop after " << step + 1 << " steps (best val F1 " << best_f1 << ")\n";
                break;
            }
        }
    }
    if (best_f1 < 0.0) save_checkpoint(ckpt_path, model);
    std::cout << "checkpoint: " << ckpt_path << "\nmetrics: " << a.out << "/metrics.csv\n";
    return kExitOk;
}

int cmd_eval(const CommonArgs& a, const std::string& labeled, const std::string& checkpoint, int fold,
             int folds) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    const std::string ckpt = require_file(checkpoint, "checkpoint");
    Model model(spec, hp, a.seed);
    load_checkpoint(ckpt, model);  // refuses a config-hash mismatch

    const std::string lab_path = require_file(labeled, "labeled manifest");
    auto samples = load_dataset(lab_path, spec, hp, fs::path(lab_path).parent_path().string(), false);

    if (fold >= 0) {
        std::set<std::string> subjects;
        for (const Sample& s : samples) subjects.insert(s.subject_id);
        auto splits = make_folds({subjects.begin(), subjects.end()}, folds, a.seed);
        std::set<std::string> test_subj(splits[static_cast<size_t>(fold)].begin(),
                                        splits[static_cast<size_t>(fold)].end());
        std::erase_if(samples, [&](const Sample& s) { return !test_subj.count(s.subject_id); });
    }
    Trainer trainer(model, a.seed + 1);
    FoldResult r = trainer.evaluate(samples, std::max(0, fold));

    fs::create_directories(a.out);
    write_run_manifest(a.out, "eval", a.config, a.seed, spec, hp);
    std::ofstream csv(a.out + "/f1.csv");
    csv << "au,f1\n";
    std::cout << " AU   F1\n";
    for (int i = 0; i < spec.n_aus(); ++i) {
        std::printf(" %-4d %.4f\n", spec.au_ids[static_cast<size_t>(i)], r.per_au_f1[static_cast<size_t>(i)]);
        csv << spec.au_ids[static_cast<size_t>(i)] << "," << r.per_au_f1[static_cast<size_t>(i)] << "\n";
    }
    std::printf(" Avg  %.4f\n", r.avg_f1);
    csv << "avg," << r.avg_f1 << "\n";

    if (a.emit_json) {
        json j;
        j["fold"] = r.fold_index;
        j["avg_f1"] = r.avg_f1;
        for (int i = 0; i < spec.n_aus(); ++i)
            j["per_au"][std::to_string(spec.au_ids[static_cast<size_t>(i)])] =
                r.per_au_f1[static_cast<size_t>(i)];
        std::cout << j.dump(2) << "\n";
    }
    return kExitOk;
}

Model load_model_for_viz(const AUSpec& spec, const HyperParams& hp, const std::string& checkpoint,
                         uint64_t seed) {
    Model model(spec, hp, seed);
    if (!checkpoint.empty()) {
        load_checkpoint(require_file(checkpoint, "checkpoint"), model);
    } else {
        std::cerr << "rtatl: warning: no checkpoint given, rendering from random weights\n";
    }
    return model;
}

int cmd_viz_flow(const CommonArgs& a, const std::string& labeled, const std::string& checkpoint,
                 int count) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    Model model = load_model_for_viz(spec, hp, checkpoint, a.seed);
    const std::string lab_path = require_file(labeled, "labeled manifest");
    BlockMatchingFlow provider;
    auto samples =
        load_dataset(lab_path, spec, hp, fs::path(lab_path).parent_path().string(), true, &provider);
    std::erase_if(samples, [](const Sample& s) { return !s.flow_target.has_value(); });
    if (samples.empty()) {
        std::cerr << "rtatl: no flow-bearing samples in the manifest\n";
        return kExitError;
    }
    samples.resize(std::min<size_t>(samples.size(), static_cast<size_t>(count)));

    Rng rng(a.seed);
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (Sample& raw : samples) {
        Sample s = augment(raw, hp, rng, false);
        Prediction unused = model.predict(stack_images({s}), centers_for({s}, spec, hp.input_size));
        (void)unused;
        NoGradGuard ng;
        Var images(stack_images({s}));
        auto fwd = model.forward(images, centers_for({s}, spec, hp.input_size), false);
        Var f_p = model.ofe.forward(fwd.bundle.global_maps, false);
        const int fh = f_p.shape()[2];
        Tensor gt = downsample_flow(*s.flow_target, fh, static_cast<double>(fh) / hp.input_size);
        Tensor pred(Shape{2, fh, fh});
        std::copy(f_p.val().v.begin(), f_p.val().v.end(), pred.v.begin());
        pairs.emplace_back(std::move(gt), std::move(pred));
    }
    fs::create_directories(a.out);
    write_run_manifest(a.out, "viz-flow", a.config, a.seed, spec, hp);
    write_png(a.out + "/flow.png", render_flow_panels(pairs));
    std::cout << a.out << "/flow.png\n";
    return kExitOk;
}

int cmd_viz_inpaint(const CommonArgs& a, const std::string& labeled, const std::string& checkpoint,
                    int count) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    Model model = load_model_for_viz(spec, hp, checkpoint, a.seed);
    const std::string lab_path = require_file(labeled, "labeled manifest");
    auto samples = load_dataset(lab_path, spec, hp, fs::path(lab_path).parent_path().string(), false);
    if (samples.empty()) {
        std::cerr << "rtatl: empty manifest\n";
        return kExitError;
    }
    samples.resize(std::min<size_t>(samples.size(), static_cast<size_t>(count)));

    Rng rng(a.seed);
    std::vector<Tensor> masked_imgs, originals, recovered;
    for (Sample& raw : samples) {
        Sample s = augment(raw, hp, rng, false);
        Sample m = apply_roi_mask(s, spec, rng);
        NoGradGuard ng;
        Var images(stack_images({m}));
        auto fwd = model.forward(images, centers_for({m}, spec, hp.input_size), false);
        const MaskDescriptor& md = *m.mask;
        Var x = slice_rows(fwd.attended[0].tokens, 2 * md.au_index, 2 * md.au_index + 2);
        Var patches = model.gen.forward(x, false);  // [2,3,s,s]

        Tensor repaired = m.image;
        for (int side = 0; side < 2; ++side) {
            const PixelBox& b = md.boxes[side];
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < spec.patch_size; ++y)
                    for (int x2 = 0; x2 < spec.patch_size; ++x2)
                        repaired.at(c, b.y0 + y, b.x0 + x2) = patches.val().at(side, c, y, x2);
        }
        masked_imgs.push_back(m.image);
        originals.push_back(s.image);
        recovered.push_back(std::move(repaired));
    }
    fs::create_directories(a.out);
    write_run_manifest(a.out, "viz-inpaint", a.config, a.seed, spec, hp);
    write_png(a.out + "/inpaint.png", render_inpaint_grid(masked_imgs, originals, recovered));
    std::cout << a.out << "/inpaint.png\n";
    return kExitOk;
}

int cmd_viz_relations(const CommonArgs& a, const std::string& checkpoint) {
    auto [spec, hp] = load_config(require_file(a.config, "config"));
    Model model = load_model_for_viz(spec, hp, checkpoint, a.seed);
    Tensor sim = model.rel.indicator_similarity();
    fs::create_directories(a.out);
    write_run_manifest(a.out, "viz-relations", a.config, a.seed, spec, hp);
    write_png(a.out + "/relations.png", render_relation_heatmap(sim));

    // indicator matrix export for external heatmap tooling
    std::ofstream csv(a.out + "/indicators.csv");
    const Tensor& ind = model.rel.indicators.val();
    for (int r = 0; r < ind.dim(0); ++r) {
        for (int c = 0; c < ind.dim(1); ++c) csv << (c ? "," : "") << ind.at(r, c);
        csv << "\n";
    }
    std::ofstream scsv(a.out + "/similarity.csv");
    for (int i = 0; i < sim.dim(0); ++i) {
        for (int j = 0; j < sim.dim(1); ++j) scsv << (j ? "," : "") << sim.at(i, j);
        scsv << "\n";
    }
    std::cout << a.out << "/relations.png\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RTATL: AU recognition with RoI-inpainting and optical-flow auxiliary tasks"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, vf_args, vi_args, vr_args;
    int synth_subjects = 6, synth_frames = 5, synth_unlabeled = 4;
    std::string tr_labeled, tr_unlabeled, ev_labeled, ev_checkpoint;
    std::string vf_labeled, vf_checkpoint, vi_labeled, vi_checkpoint, vr_checkpoint;
    int tr_steps = 500, tr_fold = -1, tr_folds = 3, tr_patience = 0, tr_eval_every = 50;
    std::string tr_init_trunk;
    bool tr_dry = false;
    int ev_fold = -1, ev_folds = 3;
    int vf_count = 4, vi_count = 4;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset on disk");
    add_common(synth, synth_args);
    synth->add_option("--subjects", synth_subjects, "labeled subjects");
    synth->add_option("--frames", synth_frames, "frames per subject");
    synth->add_option("--unlabeled-subjects", synth_unlabeled, "unlabeled still-image subjects");

    CLI::App* train = app.add_subcommand("train", "joint training run");
    add_common(train, train_args);
    train->add_option("--labeled", tr_labeled, "labeled manifest CSV");
    train->add_option("--unlabeled", tr_unlabeled, "unlabeled manifest CSV");
    train->add_option("--steps", tr_steps, "training steps");
    train->add_option("--fold", tr_fold, "hold out this subject fold");
    train->add_option("--folds", tr_folds, "fold count");
    train->add_option("--patience", tr_patience, "early-stop patience in evals (0 = off)");
    train->add_option("--eval-every", tr_eval_every, "steps between early-stop evals");
    train->add_flag("--dry-run", tr_dry, "validate config and run one step on synthetic data");
    train->add_option("--init-trunk", tr_init_trunk, "warm-start the trunk from a checkpoint");

    CLI::App* eval = app.add_subcommand("eval", "per-AU and average F1 of a checkpoint");
    add_common(eval, eval_args, true);
    eval->add_option("--labeled", ev_labeled, "labeled manifest CSV")->required();
    eval->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
    eval->add_option("--fold", ev_fold, "evaluate only this subject fold");
    eval->add_option("--folds", ev_folds, "fold count");

    CLI::App* vflow = app.add_subcommand("viz-flow", "ground-truth vs predicted flow panels");
    add_common(vflow, vf_args);
    vflow->add_option("--labeled", vf_labeled, "labeled manifest CSV")->required();
    vflow->add_option("--checkpoint", vf_checkpoint, "checkpoint file");
    vflow->add_option("--count", vf_count, "samples to render");

    CLI::App* vinp = app.add_subcommand("viz-inpaint", "masked / original / recovered grid");
    add_common(vinp, vi_args);
    vinp->add_option("--labeled", vi_labeled, "labeled manifest CSV")->required();
    vinp->add_option("--checkpoint", vi_checkpoint, "checkpoint file");
    vinp->add_option("--count", vi_count, "samples to render");

    CLI::App* vrel = app.add_subcommand("viz-relations", "AU indicator similarity heatmap");
    add_common(vrel, vr_args);
    vrel->add_option("--checkpoint", vr_checkpoint, "checkpoint file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_args, synth_subjects, synth_frames, synth_unlabeled);
        if (train->parsed()) {
            if (!tr_dry && tr_labeled.empty()) {
                std::cerr << "rtatl: train needs --labeled (or --dry-run)\n";
                return kExitMissingFile;
            }
            return cmd_train(train_args, tr_labeled, tr_unlabeled, tr_steps, tr_fold, tr_folds, tr_dry,
                             tr_patience, tr_eval_every, tr_init_trunk);
        }
        if (eval->parsed()) return cmd_eval(eval_args, ev_labeled, ev_checkpoint, ev_fold, ev_folds);
        if (vflow->parsed()) return cmd_viz_flow(vf_args, vf_labeled, vf_checkpoint, vf_count);
        if (vinp->parsed()) return cmd_viz_inpaint(vi_args, vi_labeled, vi_checkpoint, vi_count);
        if (vrel->parsed()) return cmd_viz_relations(vr_args, vr_checkpoint);
    } catch (const std::exception& e) {
        std::cerr << "rtatl: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
