#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rtatl/nn_ops.hpp"

namespace rtatl {

// Deterministic RNG handed through explicitly; no global state.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}
    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng_); }
    double normal(double mu, double sigma) { return std::normal_distribution<double>(mu, sigma)(eng_); }
    int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(eng_); }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }
    uint64_t raw() { return eng_(); }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

// Named non-parameter state (batch-norm running statistics).
using BufferMap = std::vector<std::pair<std::string, Tensor*>>;

// Named parameter listing used for counting, snapshots and checkpoints.
struct ParamMap {
    std::vector<std::pair<std::string, Var>> items;
    void add(const std::string& name, const Var& v) { items.emplace_back(name, v); }
    long long count() const {
        long long n = 0;
        for (const auto& [name, v] : items) n += v.val().numel();
        return n;
    }
    std::vector<Var> vars() const {
        std::vector<Var> out;
        out.reserve(items.size());
        for (const auto& [name, v] : items) out.push_back(v);
        return out;
    }
};

struct Conv2d {
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
    bool has_bias = true;
    Var w, b;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, bool bias, Rng& rng);
    Var forward(const Var& x) const { return conv2d(x, w, has_bias ? b : Var(), stride, pad); }
    void params(ParamMap& pm, const std::string& prefix) const;
};

struct ConvTranspose2d {
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
    bool has_bias = true;
    Var w, b;

    ConvTranspose2d() = default;
    ConvTranspose2d(int cin, int cout, int k, int stride, int pad, bool bias, Rng& rng);
    Var forward(const Var& x) const { return conv_transpose2d(x, w, has_bias ? b : Var(), stride, pad); }
    void params(ParamMap& pm, const std::string& prefix) const;
};

struct BatchNorm2d {
    int c = 0;
    Var gamma, beta;
    Tensor running_mean, running_var;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);
    Var forward(const Var& x, bool training) {
        return batchnorm2d(x, gamma, beta, running_mean, running_var, training);
    }
    void params(ParamMap& pm, const std::string& prefix) const;
    void buffers(BufferMap& bm, const std::string& prefix) {
        bm.emplace_back(prefix + ".running_mean", &running_mean);
        bm.emplace_back(prefix + ".running_var", &running_var);
    }
};

struct Linear {
    int in = 0, out = 0;
    Var w, b;  // w is [in,out]

    Linear() = default;
    Linear(int in, int out, Rng& rng);
    Var forward(const Var& x) const { return add_rowvec(matmul(x, w), b); }
    void params(ParamMap& pm, const std::string& prefix) const;
};

struct LayerNorm {
    int d = 0;
    Var gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(int d);
    Var forward(const Var& x) const { return layernorm_rows(x, gamma, beta); }
    void params(ParamMap& pm, const std::string& prefix) const;
};

// Adam with bias correction; one instance per parameter group so the D/C
// phase and the main phase can never touch each other's weights.
class Adam {
public:
    Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void zero_grad();
    double lr() const { return lr_; }

private:
    struct Slot {
        Var p;
        Tensor m, v;
    };
    std::vector<Slot> slots_;
    double lr_, b1_, b2_, eps_;
    long long t_ = 0;
};

}  // namespace rtatl
