#pragma once

#include <string>
#include <vector>

#include "ci2p/ci2p.hpp"
#include "ci2p/model_desc.hpp"

namespace ci2p {

template <class S>
struct LayerNormLayer {
    Tensor<S> gamma, beta;
    double eps = 1e-5;

    Tensor<S> operator()(const Tensor<S>& x) const { return layernorm(x, gamma, beta, eps); }
};

// Scaled dot-product multi-head attention over [N, D] tokens, scale
// 1/sqrt(D/heads), heads concatenated, output projection applied.
template <class S>
Tensor<S> msa_forward(const Tensor<S>& tokens, int heads, const Tensor<S>& w_qkv,
                      const Tensor<S>& b_qkv, const Tensor<S>& w_out, const Tensor<S>& b_out) {
    const int d = tokens.dim(1);
    if (d % heads != 0) {
        throw ConfigError("msa_forward: dim " + std::to_string(d) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const int hd = d / heads;
    auto qkv = add_bias_rows(matmul(tokens, w_qkv), b_qkv);  // [N, 3D]
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto q = slice_cols(qkv, h * hd, hd);
        auto k = slice_cols(qkv, d + h * hd, hd);
        auto v = slice_cols(qkv, 2 * d + h * hd, hd);
        auto scores = scale(matmul(q, transpose2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
        head_outs.push_back(matmul(softmax_lastdim(scores), v));
    }
    return add_bias_rows(matmul(concat_cols(head_outs), w_out), b_out);
}

// Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x)).
template <class S>
struct TransformerBlock {
    LayerNormLayer<S> ln1, ln2;
    Tensor<S> w_qkv, b_qkv, w_out, b_out;
    Tensor<S> w_fc1, b_fc1, w_fc2, b_fc2;
    int heads = 1;

    Tensor<S> operator()(const Tensor<S>& x) const {
        auto h = add(x, msa_forward(ln1(x), heads, w_qkv, b_qkv, w_out, b_out));
        auto m = add_bias_rows(matmul(ln2(h), w_fc1), b_fc1);
        m = add_bias_rows(matmul(gelu(m), w_fc2), b_fc2);
        return add(h, m);
    }
};

namespace detail {

template <class S>
LayerNormLayer<S> make_layernorm(ParamStore<S>& store, const std::string& prefix, int d) {
    LayerNormLayer<S> ln;
    ln.gamma = store.add(prefix + ".gamma", Tensor<S>::full({d}, S(1)));
    ln.beta = store.add(prefix + ".beta", Tensor<S>::zeros({d}));
    return ln;
}

template <class S>
TransformerBlock<S> make_block(ParamStore<S>& store, const std::string& prefix, int d, int hidden,
                               int heads, Rng& rng) {
    TransformerBlock<S> b;
    b.heads = heads;
    b.ln1 = make_layernorm(store, prefix + ".ln1", d);
    b.ln2 = make_layernorm(store, prefix + ".ln2", d);
    b.w_qkv = store.add(prefix + ".attn.qkv.weight", trunc_normal_init<S>({d, 3 * d}, 0.02, rng));
    b.b_qkv = store.add(prefix + ".attn.qkv.bias", Tensor<S>::zeros({3 * d}));
    b.w_out = store.add(prefix + ".attn.out.weight", trunc_normal_init<S>({d, d}, 0.02, rng));
    b.b_out = store.add(prefix + ".attn.out.bias", Tensor<S>::zeros({d}));
    b.w_fc1 = store.add(prefix + ".mlp.fc1.weight", trunc_normal_init<S>({d, hidden}, 0.02, rng));
    b.b_fc1 = store.add(prefix + ".mlp.fc1.bias", Tensor<S>::zeros({hidden}));
    b.w_fc2 = store.add(prefix + ".mlp.fc2.weight", trunc_normal_init<S>({hidden, d}, 0.02, rng));
    b.b_fc2 = store.add(prefix + ".mlp.fc2.bias", Tensor<S>::zeros({d}));
    return b;
}

}  // namespace detail

// One of the three classifier variants. GAP over tokens feeds a single linear
// head; there is no class token.
template <class S>
struct Classifier {
    ModelDesc desc;
    CodecModel<S> codec;  // ci2p variants only
    bool has_codec = false;

    Tensor<S> patch_w, patch_b;        // vit_b16 linear patch embedding
    InvertedResidual<S> reshape_unit;  // PatchReshape (ci2p_vit) / CnnReshape (ds)
    Tensor<S> pos1, pos2;              // learned positional tables
    std::vector<TransformerBlock<S>> blocks;
    LayerNormLayer<S> ln_final;
    Tensor<S> head_w, head_b;

    // Embedding stage: image -> token sequence entering block 0.
    TokenSequence<S> embed(const Tensor<S>& x) const {
        if (x.rank() != 3 || x.dim(1) != desc.image_size || x.dim(2) != desc.image_size) {
            throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match " +
                                 "image_size " + std::to_string(desc.image_size));
        }
        TokenSequence<S> seq;
        switch (desc.variant) {
            case Variant::vit_b16: {
                const int g = desc.image_size / desc.patch;
                seq.tokens = add_bias_rows(matmul(patchify(x, desc.patch), patch_w), patch_b);
                seq.rows = seq.cols = g;
                break;
            }
            case Variant::ci2p_vit:
                seq = ci2p_forward(codec, reshape_unit, x);
                break;
            case Variant::ci2p_vit_ds:
                seq = ci2p_forward_ds(codec, x);
                break;
        }
        if (desc.use_pos_embed) seq.tokens = add(seq.tokens, pos1);
        return seq;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        TokenSequence<S> seq = embed(x);
        if (desc.variant == Variant::ci2p_vit_ds) {
            for (int i = 0; i < desc.ds_split; ++i) seq.tokens = blocks[static_cast<std::size_t>(i)](seq.tokens);
            seq = cnn_reshape(reshape_unit, seq);
            if (desc.use_pos_embed) seq.tokens = add(seq.tokens, pos2);
            for (int i = desc.ds_split; i < desc.depth; ++i)
                seq.tokens = blocks[static_cast<std::size_t>(i)](seq.tokens);
        } else {
            for (const auto& b : blocks) seq.tokens = b(seq.tokens);
        }
        return head(seq.tokens);
    }

    // Test hook: run the block stack + head on externally supplied tokens
    // (non-ds variants). With use_pos_embed=false the logits are invariant to
    // token permutations.
    Tensor<S> classify_tokens(const Tensor<S>& tokens) const {
        if (desc.variant == Variant::ci2p_vit_ds) {
            throw ContractError("classify_tokens: not defined for the dual-scale variant");
        }
        Tensor<S> t = desc.use_pos_embed ? add(tokens, pos1) : tokens;
        for (const auto& b : blocks) t = b(t);
        return head(t);
    }

    Tensor<S> head(const Tensor<S>& tokens) const {
        auto pooled = mean_rows(ln_final(tokens));  // GAP
        return add(reshape(matmul(reshape(pooled, {1, desc.dim}), head_w), {desc.num_classes}),
                   head_b);
    }
};

// Builds the model and registers every parameter. ci2p variants share the
// supplied codec's encoder tensors (frozen in this store); the analyzer's
// model_params() must equal store.element_count() for the same desc.
template <class S>
Classifier<S> build_model(const ModelDesc& desc, const CodecModel<S>* codec, ParamStore<S>& store,
                          Rng& rng) {
    desc.validate();
    Classifier<S> m;
    m.desc = desc;

    const bool is_ci2p = desc.variant != Variant::vit_b16;
    if (is_ci2p) {
        if (!codec) throw ConfigError("build_model: ci2p variants require a codec");
        if (codec->m_latent != desc.codec_m || codec->n_hidden != desc.codec_n) {
            throw ConfigError("build_model: codec widths (" + std::to_string(codec->n_hidden) + "," +
                              std::to_string(codec->m_latent) + ") do not match desc (" +
                              std::to_string(desc.codec_n) + "," + std::to_string(desc.codec_m) + ")");
        }
        m.codec = *codec;
        m.has_codec = true;
        register_encoder_params(store, m.codec, /*frozen=*/true);
    }

    switch (desc.variant) {
        case Variant::vit_b16: {
            const int pd = 3 * desc.patch * desc.patch;
            m.patch_w = store.add("embed.weight", trunc_normal_init<S>({pd, desc.dim}, 0.02, rng));
            m.patch_b = store.add("embed.bias", Tensor<S>::zeros({desc.dim}));
            break;
        }
        case Variant::ci2p_vit:
            m.reshape_unit = make_inverted_residual(store, "patch_reshape", desc.codec_m,
                                                    4 * desc.codec_m, 2, rng);
            break;
        case Variant::ci2p_vit_ds:
            m.reshape_unit = make_inverted_residual(store, "cnn_reshape", desc.ds_early_dim,
                                                    4 * desc.ds_early_dim, 2, rng);
            break;
    }

    const bool ds = desc.variant == Variant::ci2p_vit_ds;
    const int early_dim = ds ? desc.ds_early_dim : desc.dim;
    const int early_tokens = desc.token_count();
    m.pos1 = store.add("pos_embed.stage1",
                       trunc_normal_init<S>({early_tokens, early_dim}, 0.02, rng));
    if (ds) {
        const int late_tokens = (desc.image_size / 32) * (desc.image_size / 32);
        m.pos2 = store.add("pos_embed.stage2",
                           trunc_normal_init<S>({late_tokens, desc.dim}, 0.02, rng));
    }

    for (int i = 0; i < desc.depth; ++i) {
        const bool early = ds && i < desc.ds_split;
        const int d = early ? desc.ds_early_dim : desc.dim;
        const int hidden = early ? desc.early_mlp_hidden() : desc.mlp_hidden;
        m.blocks.push_back(detail::make_block(store, "block" + std::to_string(i), d, hidden,
                                              desc.heads, rng));
    }
    m.ln_final = detail::make_layernorm(store, "ln_final", desc.dim);
    m.head_w = store.add("head.weight", trunc_normal_init<S>({desc.dim, desc.num_classes}, 0.02, rng));
    m.head_b = store.add("head.bias", Tensor<S>::zeros({desc.num_classes}));
    return m;
}

}  // namespace ci2p
