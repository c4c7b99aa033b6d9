#include "rtatl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "rtatl/errors.hpp"

namespace rtatl {

Var supervised_loss(const Var& probs_fused, const std::vector<std::vector<int>>& labels,
                    const std::vector<std::set<int>>& excluded) {
    if (probs_fused.val().ndim() != 2) throw ShapeError("supervised_loss: probs must be [B,N]");
    const int B = probs_fused.shape()[0], N = probs_fused.shape()[1];
    if (labels.size() != static_cast<size_t>(B) || excluded.size() != static_cast<size_t>(B))
        throw ShapeError("supervised_loss: batch size mismatch");

    Tensor y(Shape{B, N}), w(Shape{B, N});
    double n_cells = 0.0;
    for (int b = 0; b < B; ++b) {
        const auto& lab = labels[static_cast<size_t>(b)];
        if (lab.empty()) continue;  // unlabeled: the whole row stays weight 0
        if (static_cast<int>(lab.size()) != N)
            throw ShapeError("supervised_loss: label vector length mismatch");
        for (int i = 0; i < N; ++i) {
            if (lab[static_cast<size_t>(i)] != 0 && lab[static_cast<size_t>(i)] != 1)
                throw DataError("supervised_loss: labels must be binary");
            if (excluded[static_cast<size_t>(b)].count(i)) continue;
            y.at(b, i) = lab[static_cast<size_t>(i)];
            w.at(b, i) = 1.0;
            n_cells += 1.0;
        }
    }
    if (n_cells == 0.0) {
        std::cerr << "[rtatl] warning: supervised loss saw no supervisable AU cells this step\n";
        return Var(Tensor::scalar(0.0));
    }
    Var p = clamp(probs_fused, kLogEps, 1.0 - kLogEps);
    Tensor one_minus_y(Shape{B, N});
    for (size_t i = 0; i < one_minus_y.v.size(); ++i)
        one_minus_y.v[i] = w.v[i] > 0.0 ? 1.0 - y.v[i] : 0.0;
    for (size_t i = 0; i < y.v.size(); ++i)
        if (w.v[i] == 0.0) y.v[i] = 0.0;
    Var pos = mul_const(log_v(p), y);
    Var neg_term = mul_const(log_v(sub(Var(Tensor(p.shape(), 1.0)), p)), one_minus_y);
    return scale(sum_all(add(pos, neg_term)), -1.0 / n_cells);
}

std::pair<std::vector<double>, double> f1_scores(const std::vector<std::vector<int>>& predictions,
                                                 const std::vector<std::vector<int>>& labels) {
    if (predictions.size() != labels.size()) throw ShapeError("f1_scores: row count mismatch");
    if (predictions.empty()) throw ShapeError("f1_scores: empty input");
    const size_t N = predictions[0].size();
    std::vector<long long> tp(N, 0), fp(N, 0), fn(N, 0);
    for (size_t m = 0; m < predictions.size(); ++m) {
        if (predictions[m].size() != N || labels[m].size() != N)
            throw ShapeError("f1_scores: column count mismatch at row " + std::to_string(m));
        for (size_t i = 0; i < N; ++i) {
            const int p = predictions[m][i], y = labels[m][i];
            if (p == 1 && y == 1) ++tp[i];
            if (p == 1 && y == 0) ++fp[i];
            if (p == 0 && y == 1) ++fn[i];
        }
    }
    std::vector<double> f1(N, 0.0);
    double avg = 0.0;
    for (size_t i = 0; i < N; ++i) {
        const long long den = 2 * tp[i] + fp[i] + fn[i];
        f1[i] = den == 0 ? 0.0 : 2.0 * tp[i] / static_cast<double>(den);
        avg += f1[i];
    }
    return {f1, avg / static_cast<double>(N)};
}

std::vector<std::vector<std::string>> make_folds(std::vector<std::string> subjects, int k,
                                                 uint64_t seed) {
    if (static_cast<int>(subjects.size()) < k)
        throw DataError("make_folds: need at least " + std::to_string(k) + " subjects, got " +
                        std::to_string(subjects.size()));
    std::sort(subjects.begin(), subjects.end());
    Rng rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng.engine());
    std::vector<std::vector<std::string>> folds(static_cast<size_t>(k));
    for (size_t i = 0; i < subjects.size(); ++i)
        folds[i % static_cast<size_t>(k)].push_back(subjects[i]);
    return folds;
}

std::vector<std::vector<std::string>> limited_label_schedule(std::vector<std::string> subjects,
                                                             const std::vector<int>& counts,
                                                             uint64_t seed) {
    std::sort(subjects.begin(), subjects.end());
    Rng rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng.engine());
    std::vector<std::vector<std::string>> out;
    for (int c : counts) {
        if (c > static_cast<int>(subjects.size()))
            throw DataError("limited_label_schedule: requested " + std::to_string(c) +
                            " subjects, only " + std::to_string(subjects.size()) + " available");
        out.emplace_back(subjects.begin(), subjects.begin() + c);  // prefixes nest
    }
    return out;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model& model, uint64_t seed)
    : model_(model),
      rng_(seed),
      opt_main_(model.main_params().vars(), model.hp().lr),
      opt_dc_(model.dc_params().vars(), model.hp().lr) {}

namespace {

Tensor stack_images(const std::vector<Sample>& samples) {
    const Shape s = samples[0].image.shape;
    Tensor out(Shape{static_cast<int>(samples.size()), s[0], s[1], s[2]});
    double* dst = out.data();
    for (const Sample& smp : samples) {
        if (smp.image.shape != s) throw ShapeError("batch images must share one shape");
        std::copy(smp.image.v.begin(), smp.image.v.end(), dst);
        dst += smp.image.v.size();
    }
    return out;
}

Tensor stack_patches(const std::vector<Tensor>& patches) {
    const Shape s = patches[0].shape;
    Tensor out(Shape{static_cast<int>(patches.size()), s[0], s[1], s[2]});
    double* dst = out.data();
    for (const Tensor& p : patches) {
        std::copy(p.v.begin(), p.v.end(), dst);
        dst += p.v.size();
    }
    return out;
}

}  // namespace

LossReport Trainer::train_step(const std::vector<Sample>& labeled_batch,
                               const std::vector<Sample>& unlabeled_batch) {
    const AUSpec& spec = model_.spec();
    const HyperParams& hp = model_.hp();
    LossReport rep;

    // 1. augment, then mask a configured fraction of each sub-batch
    std::vector<Sample> intact;   // augmented, pre-mask
    std::vector<Sample> final_s;  // what the network sees
    std::vector<bool> is_masked;
    auto ingest = [&](const std::vector<Sample>& batch) {
        const int n_mask = static_cast<int>(std::lround(hp.mask_fraction * batch.size()));
        for (size_t i = 0; i < batch.size(); ++i) {
            Sample aug = augment(batch[i], hp, rng_, true);
            const bool mask_it = static_cast<int>(i) < n_mask;
            intact.push_back(aug);
            final_s.push_back(mask_it ? apply_roi_mask(aug, spec, rng_) : aug);
            is_masked.push_back(mask_it);
        }
    };
    ingest(labeled_batch);
    ingest(unlabeled_batch);
    if (final_s.empty()) throw DataError("train_step: empty batch");
    const int B = static_cast<int>(final_s.size());
    rep.n_labeled = static_cast<int>(labeled_batch.size());
    rep.n_unlabeled = static_cast<int>(unlabeled_batch.size());

    std::vector<Tensor> centers;
    centers.reserve(static_cast<size_t>(B));
    for (const Sample& s : final_s) {
        if (!s.landmarks) throw DataError("train_step: samples need landmarks");
        centers.push_back(compute_au_centers(*s.landmarks, spec, hp.input_size));
    }

    // 2. pseudo labels for masked unlabeled samples, from an intact no-grad pass
    std::vector<int> y_hat_of(static_cast<size_t>(B), -1);
    {
        std::vector<int> need;
        for (int b = 0; b < B; ++b)
            if (is_masked[static_cast<size_t>(b)] && !final_s[static_cast<size_t>(b)].is_labeled)
                need.push_back(b);
        if (!need.empty()) {
            std::vector<Sample> ib;
            std::vector<Tensor> ic;
            for (int b : need) {
                ib.push_back(intact[static_cast<size_t>(b)]);
                ic.push_back(centers[static_cast<size_t>(b)]);
            }
            Prediction pp = model_.predict(stack_images(ib), ic);
            for (size_t j = 0; j < need.size(); ++j) {
                const int b = need[j];
                const int au = final_s[static_cast<size_t>(b)].mask->au_index;
                Tensor row(Shape{spec.n_aus()});
                for (int i = 0; i < spec.n_aus(); ++i)
                    row.at(i) = pp.probs_fused.val().at(static_cast<int>(j), i);
                y_hat_of[static_cast<size_t>(b)] = pseudo_label(row, au, hp.pseudo_threshold);
                ++rep.n_pseudo;
            }
        }
        for (int b = 0; b < B; ++b)
            if (is_masked[static_cast<size_t>(b)] && final_s[static_cast<size_t>(b)].is_labeled) {
                const Sample& s = final_s[static_cast<size_t>(b)];
                y_hat_of[static_cast<size_t>(b)] = (*s.labels)[static_cast<size_t>(s.mask->au_index)];
            }
    }

    // 3. shared forward for the joint losses
    Var images(stack_images(final_s));
    Model::Forward fwd = model_.forward(images, centers, /*training=*/true);

    // L_Sup + lambda_f * L_F, shared by both batch compositions below
    auto finish_main_phase = [&](Var main_total) -> Var {
        std::vector<std::vector<int>> labels;
        std::vector<std::set<int>> excluded;
        for (const Sample& s : final_s) {
            labels.push_back(s.is_labeled ? *s.labels : std::vector<int>{});
            excluded.push_back(s.mask ? s.mask->excluded_au_indices : std::set<int>{});
        }
        Var l_sup = supervised_loss(fwd.pred.probs_fused, labels, excluded);
        rep.l_sup = l_sup.item();
        main_total = add(main_total, l_sup);

        std::vector<bool> valid(static_cast<size_t>(B), false);
        for (int b = 0; b < B; ++b)
            if (final_s[static_cast<size_t>(b)].flow_target) {
                valid[static_cast<size_t>(b)] = true;
                ++rep.n_flow;
            }
        if (rep.n_flow > 0) {
            Var f_p = model_.ofe.forward(fwd.bundle.global_maps, true);
            const int fh = f_p.shape()[2];
            Tensor f_g(f_p.shape());
            const double flow_scale = static_cast<double>(fh) / hp.input_size;
            for (int b = 0; b < B; ++b) {
                if (!valid[static_cast<size_t>(b)]) continue;
                Tensor down = downsample_flow(*final_s[static_cast<size_t>(b)].flow_target, fh, flow_scale);
                std::copy(down.v.begin(), down.v.end(),
                          f_g.v.begin() + static_cast<size_t>(b) * down.v.size());
            }
            Var l_f = flow_loss(f_p, f_g, valid);
            rep.l_f = l_f.item();
            main_total = add(main_total, scale(l_f, hp.lambda_f));
        }
        return main_total;
    };

    // gather the RoII pairs: both cropped sides of every masked sample
    std::vector<Var> x_rows;
    std::vector<Tensor> p_list;
    std::vector<int> y_hat;
    for (int b = 0; b < B; ++b) {
        if (!is_masked[static_cast<size_t>(b)]) continue;
        const MaskDescriptor& md = *final_s[static_cast<size_t>(b)].mask;
        x_rows.push_back(slice_rows(fwd.attended[static_cast<size_t>(b)].tokens, 2 * md.au_index,
                                    2 * md.au_index + 2));
        p_list.push_back(md.patches[0]);
        p_list.push_back(md.patches[1]);
        y_hat.push_back(y_hat_of[static_cast<size_t>(b)]);
        y_hat.push_back(y_hat_of[static_cast<size_t>(b)]);
        ++rep.n_masked;
    }

    // 4. D/C phase: update the critics on (real, fake-detached) pairs
    if (!x_rows.empty()) {
        Var x = concat_rows(x_rows);  // [2m, d] — graph reaches the backbone
        Var p(stack_patches(p_list));
        Tensor fake_vals;
        {
            NoGradGuard ng;
            fake_vals = model_.gen.forward(x.detach(), true).val();
        }
        opt_dc_.zero_grad();
        Var d_real = model_.disc.forward(p, true);
        Var d_fake = model_.disc.forward(Var(fake_vals), true);
        auto [l_adv, l_adv_g_probe] = adversarial_losses(d_real, d_fake);
        (void)l_adv_g_probe;
        Var l_d = neg(l_adv);
        Var l_c = semantic_loss(model_.cls.forward(p, true), y_hat);
        Var dc_total = add(l_d, l_c);
        dc_total.backward();
        opt_dc_.step();
        if (observer_) observer_->after_dc_phase(model_);
        rep.l_adv = l_adv.item();
        rep.l_d = l_d.item();
        rep.l_c = l_c.item();

        // 5. generator phase against the updated, frozen critics
        for (Var& v : model_.dc_params().vars()) v.set_requires_grad(false);
        opt_main_.zero_grad();
        Var fake = model_.gen.forward(x, true);
        Var l_adv_g = neg(mean_all(log_v(clamp(model_.disc.forward(fake, true), kLogEps, 1.0 - kLogEps))));
        Var l_rec = reconstruction_loss(p, fake);
        Var l_c_g = semantic_loss(model_.cls.forward(fake, true), y_hat);
        Var l_g = add(add(scale(l_adv_g, hp.lambda1), scale(l_rec, 1.0 - hp.lambda1)),
                      scale(l_c_g, hp.lambda2));
        rep.l_adv_g = l_adv_g.item();
        rep.l_rec = l_rec.item();
        rep.l_c_g = l_c_g.item();
        rep.l_g = l_g.item();

        Var main_total = finish_main_phase(l_g);
        main_total.backward();
        opt_main_.step();
        for (Var& v : model_.dc_params().vars()) v.set_requires_grad(true);
        if (observer_) observer_->after_main_phase(model_);
    } else {
        opt_main_.zero_grad();
        Var main_total = finish_main_phase(Var(Tensor::scalar(0.0)));
        main_total.backward();
        opt_main_.step();
        if (observer_) observer_->after_main_phase(model_);
    }

    rep.total = rep.l_sup + rep.l_d + rep.l_g + hp.lambda_f * rep.l_f;
    if (!std::isfinite(rep.total))
        throw std::runtime_error(
            "train_step: non-finite loss (l_sup=" + std::to_string(rep.l_sup) +
            " l_d=" + std::to_string(rep.l_d) + " l_g=" + std::to_string(rep.l_g) +
            " l_f=" + std::to_string(rep.l_f) + "; batch " + std::to_string(rep.n_labeled) +
            " labeled / " + std::to_string(rep.n_unlabeled) + " unlabeled, " +
            std::to_string(rep.n_masked) + " masked, " + std::to_string(rep.n_flow) + " with flow)");
    return rep;
}

FoldResult Trainer::evaluate(const std::vector<Sample>& test_samples, int fold_index) {
    const AUSpec& spec = model_.spec();
    const HyperParams& hp = model_.hp();
    std::vector<std::vector<int>> preds, labels;
    const int chunk = std::max(1, hp.batch_size);
    for (size_t ofs = 0; ofs < test_samples.size(); ofs += static_cast<size_t>(chunk)) {
        std::vector<Sample> batch;
        std::vector<Tensor> centers;
        for (size_t i = ofs; i < std::min(test_samples.size(), ofs + static_cast<size_t>(chunk)); ++i) {
            Sample s = augment(test_samples[i], hp, rng_, /*training=*/false);  // center crop only
            if (!s.is_labeled) continue;
            if (!s.landmarks) throw DataError("evaluate: samples need landmarks");
            centers.push_back(compute_au_centers(*s.landmarks, spec, hp.input_size));
            batch.push_back(std::move(s));
        }
        if (batch.empty()) continue;
        Prediction p = model_.predict(stack_images(batch), centers);
        for (size_t b = 0; b < batch.size(); ++b) {
            std::vector<int> row(static_cast<size_t>(spec.n_aus()));
            for (int i = 0; i < spec.n_aus(); ++i)
                row[static_cast<size_t>(i)] = p.probs_fused.val().at(static_cast<int>(b), i) >= 0.5 ? 1 : 0;
            preds.push_back(std::move(row));
            labels.push_back(*batch[b].labels);
        }
    }
    if (preds.empty()) throw DataError("evaluate: no labeled samples in the test set");
    FoldResult r;
    r.fold_index = fold_index;
    std::set<std::string> subj;
    for (const Sample& s : test_samples) subj.insert(s.subject_id);
    r.test_subjects.assign(subj.begin(), subj.end());
    std::tie(r.per_au_f1, r.avg_f1) = f1_scores(preds, labels);
    return r;
}

std::vector<LossReport> Trainer::run(const std::vector<Sample>& labeled,
                                     const std::vector<Sample>& unlabeled, int steps,
                                     const std::string& metrics_csv) {
    if (labeled.empty()) throw DataError("run: need labeled samples");
    const HyperParams& hp = model_.hp();
    std::ofstream csv;
    if (!metrics_csv.empty()) {
        csv.open(metrics_csv);
        if (!csv) throw DataError("cannot write metrics file '" + metrics_csv + "'");
        csv << "step,l_sup,l_d,l_g,l_f,total\n";
    }
    std::vector<LossReport> reports;
    reports.reserve(static_cast<size_t>(steps));
    std::vector<size_t> lab_order(labeled.size()), unlab_order(unlabeled.size());
    for (size_t i = 0; i < lab_order.size(); ++i) lab_order[i] = i;
    for (size_t i = 0; i < unlab_order.size(); ++i) unlab_order[i] = i;
    size_t lab_pos = 0, unlab_pos = 0;

    for (int step = 0; step < steps; ++step) {
        std::vector<Sample> lb, ub;
        for (int i = 0; i < hp.batch_size; ++i) {
            if (lab_pos == 0) std::shuffle(lab_order.begin(), lab_order.end(), rng_.engine());
            lb.push_back(labeled[lab_order[lab_pos]]);
            lab_pos = (lab_pos + 1) % lab_order.size();
        }
        if (!unlabeled.empty()) {
            for (int i = 0; i < hp.batch_size; ++i) {
                if (unlab_pos == 0) std::shuffle(unlab_order.begin(), unlab_order.end(), rng_.engine());
                ub.push_back(unlabeled[unlab_order[unlab_pos]]);
                unlab_pos = (unlab_pos + 1) % unlab_order.size();
            }
        }
        LossReport rep = train_step(lb, ub);
        if (csv.is_open())
            csv << step << "," << rep.l_sup << "," << rep.l_d << "," << rep.l_g << "," << rep.l_f << ","
                << rep.total << "\n";
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace rtatl
