#include "rtatl/transformer.hpp"

#include <cmath>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {

Var slice_cols(const Var& a, int c0, int c1) {
    return transpose2d(slice_rows(transpose2d(a), c0, c1));
}

Var concat_cols(const std::vector<Var>& blocks) {
    std::vector<Var> t;
    t.reserve(blocks.size());
    for (const Var& b : blocks) t.push_back(transpose2d(b));
    return transpose2d(concat_rows(t));
}

}  // namespace

Var attention(const Var& q, const Var& k, const Var& v) {
    if (q.val().ndim() != 2 || k.val().ndim() != 2 || v.val().ndim() != 2)
        throw ShapeError("attention: Q, K, V must be rank 2");
    if (q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0])
        throw ShapeError("attention: incompatible Q" + shape_str(q.shape()) + " K" +
                         shape_str(k.shape()) + " V" + shape_str(v.shape()));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
    Var scores = scale(matmul(q, transpose2d(k)), inv_sqrt_d);
    return matmul(row_softmax(scores), v);
}

MultiHeadAttention::MultiHeadAttention(int d_, int heads_, Rng& rng)
    : d(d_), heads(heads_), wq(d_, d_, rng), wk(d_, d_, rng), wv(d_, d_, rng), wo(d_, d_, rng) {
    if (d % heads != 0) throw ConfigError("attention width must divide by head count");
}

Var MultiHeadAttention::forward(const Var& q_in, const Var& kv_in) const {
    const Var q = wq.forward(q_in);
    const Var k = wk.forward(kv_in);
    const Var v = wv.forward(kv_in);
    const int dk = d / heads;
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dk, c1 = (h + 1) * dk;
        outs.push_back(attention(slice_cols(q, c0, c1), slice_cols(k, c0, c1), slice_cols(v, c0, c1)));
    }
    return wo.forward(concat_cols(outs));
}

void MultiHeadAttention::params(ParamMap& pm, const std::string& prefix) const {
    wq.params(pm, prefix + ".wq");
    wk.params(pm, prefix + ".wk");
    wv.params(pm, prefix + ".wv");
    wo.params(pm, prefix + ".wo");
}

EncoderLayer::EncoderLayer(int d, int heads, int ff_inner, Rng& rng)
    : mha(d, heads, rng), ln1(d), ln2(d), ff1(d, ff_inner, rng), ff2(ff_inner, d, rng) {}

Var EncoderLayer::forward(const Var& tokens) const {
    Var t1 = ln1.forward(add(tokens, mha.forward(tokens, tokens)));
    Var ff = ff2.forward(relu(ff1.forward(t1)));
    return ln2.forward(add(t1, ff));
}

void EncoderLayer::params(ParamMap& pm, const std::string& prefix) const {
    mha.params(pm, prefix + ".mha");
    ln1.params(pm, prefix + ".ln1");
    ln2.params(pm, prefix + ".ln2");
    ff1.params(pm, prefix + ".ff1");
    ff2.params(pm, prefix + ".ff2");
}

DecoderLayer::DecoderLayer(int d, int heads, int ff_inner, Rng& rng)
    : self_attn(d, heads, rng),
      cross_attn(d, heads, rng),
      ln1(d),
      ln2(d),
      ln3(d),
      ff1(d, ff_inner, rng),
      ff2(ff_inner, d, rng) {}

Var DecoderLayer::forward(const Var& queries, const Var& memory) const {
    Var t1 = ln1.forward(add(queries, self_attn.forward(queries, queries)));
    Var t2 = ln2.forward(add(t1, cross_attn.forward(t1, memory)));
    Var ff = ff2.forward(relu(ff1.forward(t2)));
    return ln3.forward(add(t2, ff));
}

void DecoderLayer::params(ParamMap& pm, const std::string& prefix) const {
    self_attn.params(pm, prefix + ".self");
    cross_attn.params(pm, prefix + ".cross");
    ln1.params(pm, prefix + ".ln1");
    ln2.params(pm, prefix + ".ln2");
    ln3.params(pm, prefix + ".ln3");
    ff1.params(pm, prefix + ".ff1");
    ff2.params(pm, prefix + ".ff2");
}

RelationTransformer::RelationTransformer(int d_, int heads_, int n_aus_, int ff_inner, Rng& rng)
    : d(d_), heads(heads_), n_aus(n_aus_), encoder(d_, heads_, ff_inner, rng),
      decoder(d_, heads_, ff_inner, rng) {
    Tensor ind(Shape{d, n_aus});
    for (double& e : ind.v) e = rng.normal(0.0, 0.02);
    indicators = Var(std::move(ind), true);
}

Var RelationTransformer::encode(const Var& tokens) const {
    if (tokens.val().ndim() != 2 || tokens.shape()[0] != 2 * n_aus || tokens.shape()[1] != d)
        throw ShapeError("encode: tokens must be [2N,d], got " + shape_str(tokens.shape()));
    return encoder.forward(tokens);
}

AttentionOutput RelationTransformer::decode(const Var& memory, const Var& queries) const {
    // duplicate each indicator column onto the AU's two tokens
    Var ind_rows = transpose2d(indicators);  // [N,d]
    std::vector<Var> dup;
    dup.reserve(static_cast<size_t>(2) * n_aus);
    for (int i = 0; i < n_aus; ++i) {
        Var row = slice_rows(ind_rows, i, i + 1);
        dup.push_back(row);
        dup.push_back(row);
    }
    Var q = add(queries, concat_rows(dup));
    AttentionOutput out;
    out.tokens = decoder.forward(q, memory);
    out.per_au = avg_row_pairs(out.tokens);
    return out;
}

AttentionOutput RelationTransformer::forward(const Var& roi_tokens) const {
    return decode(encode(roi_tokens), roi_tokens);
}

Tensor RelationTransformer::indicator_similarity() const {
    const Tensor& ind = indicators.val();
    Tensor sim(Shape{n_aus, n_aus});
    std::vector<double> norms(static_cast<size_t>(n_aus), 0.0);
    for (int j = 0; j < n_aus; ++j) {
        double s = 0.0;
        for (int r = 0; r < d; ++r) s += ind.at(r, j) * ind.at(r, j);
        norms[static_cast<size_t>(j)] = std::sqrt(s);
        if (norms[static_cast<size_t>(j)] == 0.0)
            throw std::domain_error("indicator_similarity: AU " + std::to_string(j) +
                                    " has a zero-norm indicator");
    }
    for (int i = 0; i < n_aus; ++i)
        for (int j = 0; j < n_aus; ++j) {
            double dot = 0.0;
            for (int r = 0; r < d; ++r) dot += ind.at(r, i) * ind.at(r, j);
            sim.at(i, j) = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
        }
    return sim;
}

void RelationTransformer::params(ParamMap& pm, const std::string& prefix) const {
    encoder.params(pm, prefix + ".enc");
    decoder.params(pm, prefix + ".dec");
    pm.add(prefix + ".indicators", indicators);
}

}  // namespace rtatl
