#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rtatl/dataset.hpp"
#include "rtatl/model.hpp"

namespace rtatl {

struct LossReport {
    double l_sup = 0, l_d = 0, l_g = 0, l_f = 0, total = 0;
    double l_adv = 0, l_adv_g = 0, l_rec = 0, l_c = 0, l_c_g = 0;
    int n_labeled = 0, n_unlabeled = 0, n_masked = 0, n_flow = 0;
    int n_pseudo = 0;  // masked unlabeled samples that took the pseudo-label path
};

struct FoldResult {
    std::vector<double> per_au_f1;
    double avg_f1 = 0.0;
    int fold_index = 0;
    std::vector<std::string> train_subjects, test_subjects;
};

// Mean binary cross-entropy over (labeled sample, non-excluded AU) cells.
// labels[b] is empty for unlabeled samples; excluded[b] lists AU indices to
// drop for that sample. All-excluded batches contribute a zero scalar.
Var supervised_loss(const Var& probs_fused, const std::vector<std::vector<int>>& labels,
                    const std::vector<std::set<int>>& excluded);

// Per-AU F1 = 2TP / (2TP + FP + FN), 0 when the denominator is 0.
std::pair<std::vector<double>, double> f1_scores(const std::vector<std::vector<int>>& predictions,
                                                 const std::vector<std::vector<int>>& labels);

// Deterministic subject partition; every subject lands in exactly one test fold.
std::vector<std::vector<std::string>> make_folds(std::vector<std::string> subjects, int k,
                                                 uint64_t seed);

// Nested random subject subsets of the requested sizes (ascending).
std::vector<std::vector<std::string>> limited_label_schedule(
    std::vector<std::string> subjects, const std::vector<int>& counts = {3, 9, 15, 21, 27},
    uint64_t seed = 1);

// Observation points inside one training step, used by tests to prove the
// optimizer phase partition with parameter snapshots.
struct PhaseObserver {
    virtual ~PhaseObserver() = default;
    virtual void after_dc_phase(Model&) {}
    virtual void after_main_phase(Model&) {}
};

class Trainer {
public:
    Trainer(Model& model, uint64_t seed);

    void set_observer(PhaseObserver* obs) { observer_ = obs; }

    // One joint step: augment+mask, forward, D/C update, then the main update.
    // Batches hold samples at aligned resolution.
    LossReport train_step(const std::vector<Sample>& labeled_batch,
                          const std::vector<Sample>& unlabeled_batch);

    FoldResult evaluate(const std::vector<Sample>& test_samples, int fold_index = 0);

    // Epoch-style loop over the datasets with metrics CSV output; returns the
    // per-step reports. unlabeled may be empty.
    std::vector<LossReport> run(const std::vector<Sample>& labeled,
                                const std::vector<Sample>& unlabeled, int steps,
                                const std::string& metrics_csv = "");

    Rng& rng() { return rng_; }

private:
    Model& model_;
    Rng rng_;
    Adam opt_main_, opt_dc_;
    PhaseObserver* observer_ = nullptr;
};

}  // namespace rtatl
