#pragma once

#include "rtatl/layers.hpp"

namespace rtatl {

// Scaled dot-product attention: Softmax(Q K^T / sqrt(d')) V where d' is the
// feature width of Q and K in this call (the per-head width under multi-head).
Var attention(const Var& q, const Var& k, const Var& v);

struct MultiHeadAttention {
    int d = 0, heads = 0;
    Linear wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(int d, int heads, Rng& rng);
    Var forward(const Var& q_in, const Var& kv_in) const;
    void params(ParamMap& pm, const std::string& prefix) const;
};

// One standard encoder layer; no positional encoding anywhere (the AU token
// set has no order).
struct EncoderLayer {
    MultiHeadAttention mha;
    LayerNorm ln1, ln2;
    Linear ff1, ff2;

    EncoderLayer() = default;
    EncoderLayer(int d, int heads, int ff_inner, Rng& rng);
    Var forward(const Var& tokens) const;
    void params(ParamMap& pm, const std::string& prefix) const;
};

struct DecoderLayer {
    MultiHeadAttention self_attn, cross_attn;
    LayerNorm ln1, ln2, ln3;
    Linear ff1, ff2;

    DecoderLayer() = default;
    DecoderLayer(int d, int heads, int ff_inner, Rng& rng);
    Var forward(const Var& queries, const Var& memory) const;
    void params(ParamMap& pm, const std::string& prefix) const;
};

struct AttentionOutput {
    Var tokens;  // [2N,d], ordered left0,right0,...,left_{N-1},right_{N-1}
    Var per_au;  // [N,d], average of each AU's two tokens
};

// Encoder over the 2N RoI tokens plus decoder with learned AU indicators.
// Both tokens of AU i receive indicator column i, so the decoder stays
// attributable per AU while left/right stay separable for inpainting.
struct RelationTransformer {
    int d = 0, heads = 0, n_aus = 0;
    EncoderLayer encoder;
    DecoderLayer decoder;
    Var indicators;  // [d,N], one column per AU

    RelationTransformer() = default;
    RelationTransformer(int d, int heads, int n_aus, int ff_inner, Rng& rng);

    Var encode(const Var& tokens) const;
    AttentionOutput decode(const Var& memory, const Var& queries) const;
    AttentionOutput forward(const Var& roi_tokens) const;

    Tensor indicator_similarity() const;  // NxN cosine similarity of columns
    void params(ParamMap& pm, const std::string& prefix) const;
};

}  // namespace rtatl
