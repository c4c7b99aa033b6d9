#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "rtatl/errors.hpp"
#include "rtatl/roii.hpp"

using namespace rtatl;
using rtatl::testing::gradcheck;

namespace {
// toy sizes per the gradient-suite scale: d=8, N=3, s=8
constexpr int kD = 8;
constexpr int kS = 8;
const std::vector<int> kGenCh{8, 4};
const std::vector<int> kDiscCh{4, 8};

Var randn(Shape s, Rng& rng, double sigma = 1.0, bool rg = true) {
    Tensor t(s);
    for (double& e : t.v) e = rng.normal(0.0, sigma);
    return Var(std::move(t), rg);
}
}  // namespace

TEST_CASE("generator: shape, range and determinism") {
    Rng rng(1);
    Generator gen(kD, kS, kGenCh, rng);
    Var x = randn({2, kD}, rng);
    Var p1 = gen.forward(x, false);
    REQUIRE(p1.shape() == Shape{2, 3, kS, kS});
    for (double v : p1.val().v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Var p2 = gen.forward(x, false);
    for (size_t i = 0; i < p1.val().v.size(); ++i) CHECK(p1.val().v[i] == p2.val().v[i]);

    // distinct inputs give distinct patches
    Var y = randn({2, kD}, rng);
    Var p3 = gen.forward(y, false);
    double diff = 0.0;
    for (size_t i = 0; i < p1.val().v.size(); ++i) diff += std::fabs(p1.val().v[i] - p3.val().v[i]);
    CHECK(diff > 1e-9);

    // full-scale ladder: 5 layers for s=48 with the default channel plan
    Rng rng2(2);
    Generator full(128, 48, {1024, 512, 256, 128}, rng2);
    CHECK(full.ups.size() == 5);
}

TEST_CASE("discriminator: outputs in (0,1), batch of scalars, 5 layers at full scale") {
    Rng rng(3);
    Discriminator d(kS, kDiscCh, rng);
    Var p = randn({3, 3, kS, kS}, rng, 0.5);
    Var out = d.forward(p, false);
    REQUIRE(out.shape() == Shape{3});
    for (double v : out.val().v) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK_THROWS_AS(d.forward(randn({1, 3, kS + 2, kS + 2}, rng), false), ShapeError);

    Rng rng2(4);
    Discriminator full(48, {128, 256, 512, 1024}, rng2);
    CHECK(full.downs.size() + 1 == 5);
}

TEST_CASE("discriminator separates a separable toy set after training alone") {
    Rng rng(5);
    Discriminator d(kS, kDiscCh, rng);
    ParamMap pm;
    d.params(pm, "d");
    Adam opt(pm.vars(), 0.01);

    // reals: bright patches, fakes: dark patches
    Rng dr(6);
    auto make_batch = [&](double base) {
        Tensor t(Shape{8, 3, kS, kS});
        for (double& e : t.v) e = base + dr.uniform(0.0, 0.2);
        return Var(t);
    };
    for (int step = 0; step < 60; ++step) {
        Var reals = make_batch(0.7), fakes = make_batch(0.1);
        auto [l_adv, l_adv_g] = adversarial_losses(d.forward(reals, true), d.forward(fakes, true));
        (void)l_adv_g;
        Var l_d = neg(l_adv);
        opt.zero_grad();
        l_d.backward();
        opt.step();
    }
    Var dr_out = d.forward(make_batch(0.7), false);
    Var df_out = d.forward(make_batch(0.1), false);
    double mr = 0.0, mf = 0.0;
    for (double v : dr_out.val().v) mr += v / 8.0;
    for (double v : df_out.val().v) mf += v / 8.0;
    CHECK(mr > mf);
}

TEST_CASE("adversarial losses: closed forms at D == 0.5 and at a perfect D") {
    Var half(Tensor(Shape{4}, 0.5));
    auto [l_adv, l_adv_g] = adversarial_losses(half, half);
    CHECK(l_adv.item() == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
    CHECK(l_adv.item() == doctest::Approx(-1.3863).epsilon(1e-4));
    CHECK(l_adv_g.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(l_adv_g.item() == doctest::Approx(0.6931).epsilon(1e-4));

    Var real_perfect(Tensor(Shape{4}, 1.0 - kLogEps));
    Var fake_perfect(Tensor(Shape{4}, kLogEps));
    auto [l2, g2] = adversarial_losses(real_perfect, fake_perfect);
    (void)g2;
    CHECK(l2.item() < 0.0);
    CHECK(l2.item() > -1e-5);  // approaches 0 from below
}

TEST_CASE("gradcheck: adversarial generator loss through G and D") {
    Rng rng(7);
    Generator gen(kD, kS, kGenCh, rng);
    Discriminator d(kS, kDiscCh, rng);
    Var x = randn({2, kD}, rng);
    auto f = [&]() {
        Var fake = gen.forward(x, true);
        return neg(mean_all(log_v(clamp(d.forward(fake, true), kLogEps, 1.0 - kLogEps))));
    };
    ParamMap pm;
    gen.params(pm, "g");
    std::vector<Var> leaves{x, pm.items[0].second, pm.items[2].second};
    auto res = gradcheck(f, leaves, 1e-5);
    CHECK_MESSAGE(res.max_rel_err < 1e-3, res.worst);
}

TEST_CASE("reconstruction loss: identity, constant field arithmetic, triangle inequality") {
    Var p(Tensor(Shape{2, 3, 48, 48}, 0.0));
    Var g_same(Tensor(Shape{2, 3, 48, 48}, 0.0));
    CHECK(reconstruction_loss(p, g_same).item() == 0.0);

    Var g_half(Tensor(Shape{2, 3, 48, 48}, 0.5));
    CHECK(reconstruction_loss(p, g_half).item() == doctest::Approx(3456.0).epsilon(1e-12));

    Rng rng(8);
    Var a = randn({1, 3, 8, 8}, rng), b = randn({1, 3, 8, 8}, rng), m = randn({1, 3, 8, 8}, rng);
    const double ab = reconstruction_loss(a, b).item();
    const double am = reconstruction_loss(a, m).item();
    const double mb = reconstruction_loss(m, b).item();
    CHECK(ab <= am + mb + 1e-12);
}

TEST_CASE("gradcheck: reconstruction loss through the generator") {
    Rng rng(9);
    Generator gen(kD, kS, kGenCh, rng);
    Var x = randn({2, kD}, rng);
    Var p = randn({2, 3, kS, kS}, rng, 0.3, false);
    auto f = [&]() { return reconstruction_loss(p, gen.forward(x, true)); };
    ParamMap pm;
    gen.params(pm, "g");
    std::vector<Var> leaves{x};
    for (auto& [n, v] : pm.items) leaves.push_back(v);
    auto res = gradcheck(f, leaves, 1e-5);
    CHECK_MESSAGE(res.max_rel_err < 1e-3, res.worst);
}

TEST_CASE("semantic losses: closed forms and C-freeze in the G step") {
    Rng rng(10);
    Classifier c(kS, kDiscCh, rng);
    std::vector<int> y{1, 0, 1};

    // C(p) == y exactly -> loss clamps to ~0
    Var exact(Tensor::from({3}, {1.0, 0.0, 1.0}));
    CHECK(semantic_loss(exact, y).item() == doctest::Approx(-std::log(1.0 - kLogEps)).epsilon(1e-6));
    // C == 0.5 -> log 2
    Var half(Tensor(Shape{3}, 0.5));
    CHECK(semantic_loss(half, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(semantic_loss(half, std::vector<int>{1, 2, 0}), DataError);

    // freezing C blocks gradients into C while still reaching G upstream
    Generator gen(kD, kS, kGenCh, rng);
    Var x = randn({2, kD}, rng);
    ParamMap cp;
    c.params(cp, "c");
    for (auto& [n, v] : cp.items) v.set_requires_grad(false);
    Var fake = gen.forward(x, true);
    Var l_c_g = semantic_loss(c.forward(fake, true), std::vector<int>{1, 0});
    l_c_g.backward();
    for (auto& [n, v] : cp.items) CHECK_FALSE(v.has_grad());
    ParamMap gp;
    gen.params(gp, "g");
    bool any_g = false;
    for (auto& [n, v] : gp.items)
        if (v.has_grad() && v.grad().max_abs() > 0.0) any_g = true;
    CHECK(any_g);
    for (auto& [n, v] : cp.items) v.set_requires_grad(true);
}

TEST_CASE("gradcheck: semantic consistency loss") {
    Rng rng(11);
    Classifier c(kS, kDiscCh, rng);
    Var p = randn({2, 3, kS, kS}, rng, 0.4);
    std::vector<int> y{1, 0};
    auto f = [&]() { return semantic_loss(c.forward(p, true), y); };
    ParamMap pm;
    c.params(pm, "c");
    std::vector<Var> leaves{p, pm.items[0].second, pm.items[1].second};
    auto res = gradcheck(f, leaves, 1e-5);
    CHECK_MESSAGE(res.max_rel_err < 1e-3, res.worst);
}

TEST_CASE("pseudo_label: threshold boundary inclusive") {
    Tensor probs = Tensor::from({3}, {0.7, 0.5, 0.2});
    CHECK(pseudo_label(probs, 0, 0.5) == 1);
    CHECK(pseudo_label(probs, 1, 0.5) == 1);  // boundary -> positive
    CHECK(pseudo_label(probs, 2, 0.5) == 0);
}

TEST_CASE("roii_step: loss composition identities") {
    Rng rng(12);
    Generator gen(kD, kS, kGenCh, rng);
    Discriminator d(kS, kDiscCh, rng);
    Classifier c(kS, kDiscCh, rng);
    RoIIBatch batch;
    batch.x = randn({4, kD}, rng);
    batch.p = randn({4, 3, kS, kS}, rng, 0.3);
    batch.y_hat = {1, 1, 0, 1};
    auto losses = roii_step(gen, d, c, batch, 0.1, 0.1);
    REQUIRE(losses.has_value());
    CHECK(losses->l_d == -losses->l_adv);  // exact by construction
    CHECK(losses->l_g ==
          doctest::Approx(0.1 * losses->l_adv_g + 0.9 * losses->l_rec + 0.1 * losses->l_c_g).epsilon(1e-7));

    auto l0 = roii_step(gen, d, c, batch, 0.0, 0.1);
    CHECK(l0->l_g == doctest::Approx(l0->l_rec + 0.1 * l0->l_c_g).epsilon(1e-7));

    // all scalars finite
    for (double v : {losses->l_adv, losses->l_adv_g, losses->l_rec, losses->l_c, losses->l_c_g,
                     losses->l_d, losses->l_g})
        CHECK(std::isfinite(v));

    RoIIBatch empty;
    CHECK_FALSE(roii_step(gen, d, c, empty, 0.1, 0.1).has_value());
}
