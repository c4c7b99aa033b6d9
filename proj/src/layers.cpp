#include "rtatl/layers.hpp"

#include <cmath>

namespace rtatl {

namespace {

Tensor he_normal(Shape s, int fan_in, Rng& rng) {
    Tensor t(s);
    const double std = std::sqrt(2.0 / fan_in);
    for (double& e : t.v) e = rng.normal(0.0, std);
    return t;
}

Tensor xavier_uniform(Shape s, int fan_in, int fan_out, Rng& rng) {
    Tensor t(s);
    const double lim = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& e : t.v) e = rng.uniform(-lim, lim);
    return t;
}

}  // namespace

Conv2d::Conv2d(int cin_, int cout_, int k_, int stride_, int pad_, bool bias_, Rng& rng)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_), has_bias(bias_) {
    w = Var(he_normal(Shape{cout, cin, k, k}, cin * k * k, rng), true);
    if (has_bias) b = Var(Tensor(Shape{cout}, 0.0), true);
}

void Conv2d::params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    if (has_bias) pm.add(prefix + ".b", b);
}

ConvTranspose2d::ConvTranspose2d(int cin_, int cout_, int k_, int stride_, int pad_, bool bias_, Rng& rng)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_), has_bias(bias_) {
    w = Var(he_normal(Shape{cin, cout, k, k}, cin * k * k, rng), true);
    if (has_bias) b = Var(Tensor(Shape{cout}, 0.0), true);
}

void ConvTranspose2d::params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    if (has_bias) pm.add(prefix + ".b", b);
}

BatchNorm2d::BatchNorm2d(int channels) : c(channels) {
    gamma = Var(Tensor(Shape{c}, 1.0), true);
    beta = Var(Tensor(Shape{c}, 0.0), true);
    running_mean = Tensor(Shape{c}, 0.0);
    running_var = Tensor(Shape{c}, 1.0);
}

void BatchNorm2d::params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
}

Linear::Linear(int in_, int out_, Rng& rng) : in(in_), out(out_) {
    w = Var(xavier_uniform(Shape{in, out}, in, out, rng), true);
    b = Var(Tensor(Shape{out}, 0.0), true);
}

void Linear::params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
}

LayerNorm::LayerNorm(int d_) : d(d_) {
    gamma = Var(Tensor(Shape{d}, 1.0), true);
    beta = Var(Tensor(Shape{d}, 0.0), true);
}

void LayerNorm::params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
}

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    slots_.reserve(params.size());
    for (Var& p : params) slots_.push_back({p, Tensor(p.val().shape, 0.0), Tensor(p.val().shape, 0.0)});
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Slot& s : slots_) {
        if (!s.p.has_grad()) continue;
        const Tensor& g = s.p.grad();
        Tensor& val = s.p.val_mut();
        for (size_t i = 0; i < val.v.size(); ++i) {
            s.m.v[i] = b1_ * s.m.v[i] + (1.0 - b1_) * g.v[i];
            s.v.v[i] = b2_ * s.v.v[i] + (1.0 - b2_) * g.v[i] * g.v[i];
            const double mhat = s.m.v[i] / bc1;
            const double vhat = s.v.v[i] / bc2;
            val.v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.p.zero_grad();
}

}  // namespace rtatl
