#pragma once

#include <string>

#include "ci2p/codec.hpp"
#include "ci2p/ops.hpp"

namespace ci2p {

template <class S>
struct TokenSequence {
    Tensor<S> tokens;  // [rows*cols, D], row-major over the grid
    int rows = 0;
    int cols = 0;
};

// MobileNet-style inverted residual: 1x1 expand -> relu6 -> 3x3 depthwise
// (stride) -> relu6 -> 1x1 linear project. The skip connection only exists
// for stride 1 with matching channel counts; both reshape units here use
// stride 2, so it is absent.
template <class S>
struct InvertedResidual {
    Conv2dLayer<S> expand;     // 1x1, in -> in*expansion
    Conv2dLayer<S> depthwise;  // 3x3, groups = hidden, pad 1
    Conv2dLayer<S> project;    // 1x1, hidden -> out
    int in_channels = 0, out_channels = 0, stride = 1;

    Tensor<S> operator()(const Tensor<S>& x) const {
        auto h = relu6(expand(x));
        h = relu6(depthwise(h));
        h = project(h);
        if (stride == 1 && in_channels == out_channels) h = add(h, x);
        return h;
    }
};

template <class S>
InvertedResidual<S> make_inverted_residual(ParamStore<S>& store, const std::string& prefix,
                                           int in_channels, int out_channels, int stride, Rng& rng,
                                           int expansion = 4) {
    const int hidden = in_channels * expansion;
    InvertedResidual<S> ir;
    ir.in_channels = in_channels;
    ir.out_channels = out_channels;
    ir.stride = stride;
    ir.expand.w = store.add(prefix + ".expand.weight",
                            kaiming_uniform_conv<S>({hidden, in_channels, 1, 1}, rng));
    ir.expand.b = store.add(prefix + ".expand.bias", Tensor<S>::zeros({hidden}));
    ir.depthwise.w =
        store.add(prefix + ".depthwise.weight", kaiming_uniform_conv<S>({hidden, 1, 3, 3}, rng));
    ir.depthwise.b = store.add(prefix + ".depthwise.bias", Tensor<S>::zeros({hidden}));
    ir.depthwise.stride = stride;
    ir.depthwise.pad = 1;
    ir.depthwise.groups = hidden;
    ir.project.w = store.add(prefix + ".project.weight",
                             kaiming_uniform_conv<S>({out_channels, hidden, 1, 1}, rng));
    ir.project.b = store.add(prefix + ".project.bias", Tensor<S>::zeros({out_channels}));
    return ir;
}

// Latent [C,h,w] (h, w even) -> [4C, h/2, w/2] through a stride-2 inverted
// residual unit.
template <class S>
Tensor<S> patch_reshape(const InvertedResidual<S>& unit, const Tensor<S>& latent) {
    if (latent.rank() != 3 || latent.dim(0) != unit.in_channels) {
        throw DimensionError("patch_reshape: latent " + shape_str(latent.shape()) + " vs unit input " +
                             std::to_string(unit.in_channels));
    }
    if (latent.dim(1) % 2 != 0 || latent.dim(2) % 2 != 0) {
        throw DimensionError("patch_reshape: spatial dims must be even, got " +
                             shape_str(latent.shape()));
    }
    if (unit.out_channels != 4 * unit.in_channels || unit.stride != 2) {
        throw ConfigError("patch_reshape: unit must be stride 2 with 4x channel growth");
    }
    return unit(latent);
}

// Full patch-embedding replacement: frozen codec encoder, PatchReshape,
// flatten. Gradients stop at the encoder output; the reshape unit trains with
// the downstream model.
template <class S>
TokenSequence<S> ci2p_forward(const CodecModel<S>& codec, const InvertedResidual<S>& reshape,
                              const Tensor<S>& x) {
    if (x.rank() != 3 || x.dim(1) % 32 != 0 || x.dim(2) % 32 != 0) {
        throw DimensionError("ci2p_forward: input " + shape_str(x.shape()) +
                             " must have H,W multiples of 32");
    }
    auto latent = encode(codec, x).detach();
    auto z = patch_reshape(reshape, latent);
    TokenSequence<S> seq;
    seq.rows = z.dim(1);
    seq.cols = z.dim(2);
    seq.tokens = chw_to_tokens(z);
    return seq;
}

// Dual-scale embedding: the raw latent is tokenized directly, one token per
// latent pixel at dimension M.
template <class S>
TokenSequence<S> ci2p_forward_ds(const CodecModel<S>& codec, const Tensor<S>& x) {
    if (x.rank() != 3 || x.dim(1) % 16 != 0 || x.dim(2) % 16 != 0) {
        throw DimensionError("ci2p_forward_ds: input " + shape_str(x.shape()) +
                             " must have H,W multiples of 16");
    }
    auto latent = encode(codec, x).detach();
    TokenSequence<S> seq;
    seq.rows = latent.dim(1);
    seq.cols = latent.dim(2);
    seq.tokens = chw_to_tokens(latent);
    return seq;
}

// Mid-network reshape for the dual-scale variant: [N, C] tokens on an even
// grid -> [N/4, 4C] tokens on the halved grid.
template <class S>
TokenSequence<S> cnn_reshape(const InvertedResidual<S>& unit, const TokenSequence<S>& seq) {
    if (seq.rows % 2 != 0 || seq.cols % 2 != 0) {
        throw DimensionError("cnn_reshape: grid " + std::to_string(seq.rows) + "x" +
                             std::to_string(seq.cols) + " must be even");
    }
    auto chw = tokens_to_chw(seq.tokens, seq.rows, seq.cols);
    auto z = patch_reshape(unit, chw);
    TokenSequence<S> out;
    out.rows = z.dim(1);
    out.cols = z.dim(2);
    out.tokens = chw_to_tokens(z);
    return out;
}

}  // namespace ci2p
