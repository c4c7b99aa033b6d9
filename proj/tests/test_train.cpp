#include "doctest.h"

#include <cmath>
#include <set>

#include "rtatl/errors.hpp"
#include "rtatl/train.hpp"

using namespace rtatl;

namespace {
std::string cfg(const std::string& name) { return std::string(RTATL_CONFIG_DIR) + "/" + name; }
std::pair<AUSpec, HyperParams> desk_cfg() { return load_config(cfg("synth.cfg")); }

std::vector<Tensor> snapshot(const ParamMap& pm) {
    std::vector<Tensor> out;
    for (const auto& [n, v] : pm.items) out.push_back(v.val());
    return out;
}

bool same(const std::vector<Tensor>& a, const ParamMap& pm) {
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].v != pm.items[i].second.val().v) return false;
    return true;
}
}  // namespace

TEST_CASE("supervised_loss: perfect, uniform and the exclusion gradient contract") {
    std::vector<std::vector<int>> labels{{1, 0, 1}};
    std::vector<std::set<int>> no_excl{{}};

    Var perfect(Tensor::from({1, 3}, {1.0, 0.0, 1.0}), true);
    CHECK(supervised_loss(perfect, labels, no_excl).item() < 1e-5);

    Var half(Tensor(Shape{1, 3}, 0.5), true);
    CHECK(supervised_loss(half, labels, no_excl).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // excluding AU 1 zeroes its gradient exactly, others stay live
    Var p(Tensor::from({1, 3}, {0.6, 0.4, 0.7}), true);
    std::vector<std::set<int>> excl{{1}};
    Var loss = supervised_loss(p, labels, excl);
    loss.backward();
    CHECK(p.grad().at(0, 1) == 0.0);
    CHECK(p.grad().at(0, 0) != 0.0);
    CHECK(p.grad().at(0, 2) != 0.0);
}

TEST_CASE("supervised_loss: unlabeled samples contribute exactly nothing") {
    std::vector<std::vector<int>> labels{{1, 0}, {}};
    std::vector<std::set<int>> excl{{}, {}};
    Var p(Tensor::from({2, 2}, {0.8, 0.3, 0.9, 0.9}), true);
    Var loss = supervised_loss(p, labels, excl);
    loss.backward();
    CHECK(p.grad().at(1, 0) == 0.0);
    CHECK(p.grad().at(1, 1) == 0.0);

    // an entirely unlabeled batch produces a constant zero (no graph)
    std::vector<std::vector<int>> none{{}, {}};
    Var p2(Tensor(Shape{2, 2}, 0.5), true);
    Var z = supervised_loss(p2, none, excl);
    CHECK(z.item() == 0.0);
    CHECK_FALSE(z.requires_grad());
}

TEST_CASE("f1_scores: formula case, perfect case, zero denominator") {
    // TP=2, FP=1, FN=1 on one AU
    std::vector<std::vector<int>> pred{{1}, {1}, {1}, {0}, {0}};
    std::vector<std::vector<int>> lab{{1}, {1}, {0}, {1}, {0}};
    auto [f1, avg] = f1_scores(pred, lab);
    CHECK(f1[0] == doctest::Approx(2.0 * 2 / (2.0 * 2 + 1 + 1)).epsilon(1e-12));
    CHECK(f1[0] == doctest::Approx(0.6667).epsilon(1e-3));

    auto [f2, avg2] = f1_scores(lab, lab);
    CHECK(avg2 == 1.0);

    // all-negative AU: denominator 0 -> F1 defined as 0
    std::vector<std::vector<int>> zp{{0}, {0}};
    auto [f3, avg3] = f1_scores(zp, zp);
    CHECK(f3[0] == 0.0);
    CHECK(avg3 == 0.0);

    std::vector<std::vector<int>> ragged{{0, 1}, {0}};
    CHECK_THROWS_AS(f1_scores(ragged, ragged), ShapeError);
    CHECK_THROWS_AS(f1_scores(pred, zp), ShapeError);
}

TEST_CASE("f1_scores equals an independent confusion-matrix oracle on random cases") {
    Rng rng(77);
    for (int rep = 0; rep < 200; ++rep) {
        const int M = 1 + rng.uniform_int(40), N = 1 + rng.uniform_int(6);
        std::vector<std::vector<int>> pred(M, std::vector<int>(N)), lab(M, std::vector<int>(N));
        for (int m = 0; m < M; ++m)
            for (int n = 0; n < N; ++n) {
                pred[m][n] = rng.bernoulli(0.4) ? 1 : 0;
                lab[m][n] = rng.bernoulli(0.3) ? 1 : 0;
            }
        auto [f1, avg] = f1_scores(pred, lab);

        // oracle: explicit per-cell confusion counting, separate code path
        double oracle_avg = 0.0;
        for (int n = 0; n < N; ++n) {
            long long tp = 0, fp = 0, fn = 0;
            for (int m = 0; m < M; ++m) {
                if (pred[m][n] == 1) {
                    if (lab[m][n] == 1)
                        ++tp;
                    else
                        ++fp;
                } else if (lab[m][n] == 1) {
                    ++fn;
                }
            }
            double o = (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * tp / double(2 * tp + fp + fn);
            CHECK(f1[n] == o);
            oracle_avg += o;
        }
        CHECK(avg == oracle_avg / N);
    }
}

TEST_CASE("make_folds: 27 subjects split 9/9/9, disjoint, seed-stable") {
    std::vector<std::string> subjects;
    for (int i = 0; i < 27; ++i) subjects.push_back("F" + std::to_string(i));
    auto folds = make_folds(subjects, 3, 11);
    REQUIRE(folds.size() == 3);
    std::set<std::string> seen;
    for (const auto& f : folds) {
        CHECK(f.size() == 9);
        for (const auto& s : f) CHECK(seen.insert(s).second);
    }
    CHECK(seen.size() == 27);
    auto folds2 = make_folds(subjects, 3, 11);
    CHECK(folds == folds2);
    auto folds3 = make_folds(subjects, 3, 12);
    CHECK(folds != folds3);
    CHECK_THROWS_AS(make_folds({"a", "b"}, 3, 1), DataError);
}

TEST_CASE("limited_label_schedule: nested prefixes, full count, overflow error") {
    std::vector<std::string> subjects;
    for (int i = 0; i < 27; ++i) subjects.push_back("F" + std::to_string(i));
    auto sched = limited_label_schedule(subjects, {3, 9, 15, 21, 27}, 5);
    REQUIRE(sched.size() == 5);
    CHECK(sched[4].size() == 27);
    for (size_t i = 0; i + 1 < sched.size(); ++i) {
        std::set<std::string> big(sched[i + 1].begin(), sched[i + 1].end());
        for (const auto& s : sched[i]) CHECK(big.count(s) == 1);
    }
    auto sched2 = limited_label_schedule(subjects, {3, 9, 15, 21, 27}, 5);
    CHECK(sched == sched2);
    CHECK_THROWS_AS(limited_label_schedule(subjects, {30}, 5), DataError);
}

TEST_CASE("train_step: no masking and no flow reduces the total to the supervised loss") {
    auto [spec, hp] = desk_cfg();
    hp.mask_fraction = 0.0;
    hp.batch_size = 4;
    Model model(spec, hp, 1);
    Trainer trainer(model, 2);
    auto samples = synth_to_samples(synth_dataset(3, 4, 1, spec, hp), spec, hp, true, false);
    LossReport rep = trainer.train_step(samples, {});
    CHECK(rep.l_d == 0.0);
    CHECK(rep.l_g == 0.0);
    CHECK(rep.l_f == 0.0);
    CHECK(rep.n_masked == 0);
    CHECK(rep.total == rep.l_sup);
}

TEST_CASE("train_step: loss identity and aux-module usage") {
    auto [spec, hp] = desk_cfg();
    hp.batch_size = 4;
    Model model(spec, hp, 4);
    Trainer trainer(model, 5);
    auto labeled = synth_to_samples(synth_dataset(6, 2, 4, spec, hp), spec, hp);
    auto unlabeled = synth_to_samples(synth_dataset(7, 2, 1, spec, hp), spec, hp, false, false);

    model.reset_aux_calls();
    std::vector<Sample> lb(labeled.begin(), labeled.begin() + 4);
    std::vector<Sample> ub(unlabeled.begin(), unlabeled.end());
    LossReport rep = trainer.train_step(lb, ub);
    CHECK(rep.total == doctest::Approx(rep.l_sup + rep.l_d + rep.l_g + hp.lambda_f * rep.l_f).epsilon(1e-12));
    CHECK(rep.n_masked > 0);
    CHECK(rep.n_flow > 0);
    CHECK(rep.n_pseudo > 0);  // masked unlabeled samples took the pseudo path
    CHECK(model.aux_calls() > 0);
    CHECK(model.gen.calls > 0);
    CHECK(model.disc.calls > 0);
    CHECK(model.cls.calls > 0);
    CHECK(model.ofe.calls > 0);
}

TEST_CASE("train_step: labeled masked samples use ground truth, not pseudo labels") {
    auto [spec, hp] = desk_cfg();
    hp.batch_size = 4;
    hp.mask_fraction = 1.0;  // mask everything so every sample needs a semantic label
    Model model(spec, hp, 14);
    Trainer trainer(model, 15);
    auto labeled = synth_to_samples(synth_dataset(16, 4, 1, spec, hp), spec, hp, true, false);
    LossReport rep = trainer.train_step(labeled, {});
    CHECK(rep.n_masked == 4);
    CHECK(rep.n_pseudo == 0);  // the pseudo path never ran
}

TEST_CASE("trunk warm start copies trunk tensors only") {
    auto [spec, hp] = desk_cfg();
    Model donor(spec, hp, 17);
    const std::string path = "/tmp/rtatl_trunk_ws.bin";
    save_checkpoint(path, donor);

    Model fresh(spec, hp, 18);
    ParamMap before_heads;
    fresh.heads.params(before_heads, "h");
    std::vector<Tensor> head_snapshot;
    for (auto& [n, v] : before_heads.items) head_snapshot.push_back(v.val());

    const size_t n = load_trunk_checkpoint(path, fresh);
    CHECK(n > 0);
    ParamMap donor_trunk, fresh_trunk;
    donor.trunk.params(donor_trunk, "t");
    fresh.trunk.params(fresh_trunk, "t");
    for (size_t i = 0; i < donor_trunk.items.size(); ++i)
        CHECK(fresh_trunk.items[i].second.val().v == donor_trunk.items[i].second.val().v);
    // non-trunk parameters keep their fresh initialization
    ParamMap after_heads;
    fresh.heads.params(after_heads, "h");
    for (size_t i = 0; i < head_snapshot.size(); ++i)
        CHECK(after_heads.items[i].second.val().v == head_snapshot[i].v);
    std::remove(path.c_str());
}

TEST_CASE("update partition: snapshots across both phases of several steps") {
    auto [spec, hp] = desk_cfg();
    hp.batch_size = 4;
    Model model(spec, hp, 8);
    Trainer trainer(model, 9);
    auto labeled = synth_to_samples(synth_dataset(10, 4, 4, spec, hp), spec, hp);

    struct Observer : PhaseObserver {
        std::vector<Tensor> pre_step_main, post_dc_dc;
        int violations = 0, dc_steps = 0;
        void after_dc_phase(Model& m) override {
            ++dc_steps;
            // D phase must leave the whole main group untouched
            if (!same(pre_step_main, m.main_params())) ++violations;
            post_dc_dc = snapshot(m.dc_params());
        }
        void after_main_phase(Model& m) override {
            // main phase must leave D/C exactly where the D step put them
            if (!post_dc_dc.empty() && !same(post_dc_dc, m.dc_params())) ++violations;
        }
    } obs;
    trainer.set_observer(&obs);

    for (int step = 0; step < 6; ++step) {
        std::vector<Sample> lb;
        for (int i = 0; i < 4; ++i) lb.push_back(labeled[(step * 4 + i) % labeled.size()]);
        obs.pre_step_main = snapshot(model.main_params());
        obs.post_dc_dc.clear();
        trainer.train_step(lb, {});
    }
    CHECK(obs.dc_steps > 0);
    CHECK(obs.violations == 0);
}

TEST_CASE("training is deterministic given seed, config and data") {
    auto [spec, hp] = desk_cfg();
    hp.batch_size = 4;
    auto run_once = [&]() {
        Model model(spec, hp, 21);
        Trainer trainer(model, 22);
        auto labeled = synth_to_samples(synth_dataset(23, 4, 1, spec, hp), spec, hp, true, false);
        std::vector<double> totals;
        for (auto& rep : trainer.run(labeled, {}, 5)) totals.push_back(rep.total);
        return totals;
    };
    CHECK(run_once() == run_once());
}

TEST_CASE("short overfit run improves training F1 substantially") {
    auto [spec, hp] = desk_cfg();
    hp.batch_size = 8;
    hp.mask_fraction = 0.0;  // plain supervised smoke
    Model model(spec, hp, 31);
    Trainer trainer(model, 32);
    auto samples = synth_to_samples(synth_dataset(33, 8, 1, spec, hp), spec, hp, true, false);

    FoldResult before = trainer.evaluate(samples);
    CHECK(before.test_subjects.size() == 8);  // split recorded in the result
    trainer.run(samples, {}, 60);
    FoldResult after = trainer.evaluate(samples);
    CHECK(after.avg_f1 > before.avg_f1);
    CHECK(after.avg_f1 > 0.6);
}
