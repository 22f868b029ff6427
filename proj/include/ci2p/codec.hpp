#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ci2p/init.hpp"
#include "ci2p/ops.hpp"
#include "ci2p/param_store.hpp"
#include "ci2p/rng.hpp"

namespace ci2p {

enum class QuantMode { train, eval };

template <class S>
struct Conv2dLayer {
    Tensor<S> w, b;
    int stride = 1, pad = 0, groups = 1;

    Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad, groups); }
};

template <class S>
struct ConvTranspose2dLayer {
    Tensor<S> w, b;
    int stride = 1, pad = 0, out_pad = 0;

    Tensor<S> operator()(const Tensor<S>& x) const {
        return conv_transpose2d(x, w, b, stride, pad, out_pad);
    }
};

// Generalized divisive normalization across channels:
//   y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)
// The inverse variant multiplies instead of dividing (decoder side).
// gamma is stored as a [C, C] matrix and applied as a 1x1 convolution over x^2.
template <class S>
struct GdnLayer {
    Tensor<S> beta;   // [C]
    Tensor<S> gamma;  // [C, C]
    bool inverse = false;

    Tensor<S> operator()(const Tensor<S>& x) const {
        const int c = x.dim(0);
        auto gw = reshape(gamma, {c, c, 1, 1});
        auto norm = conv2d(mul(x, x), gw, beta, 1, 0, 1);
        return mul(x, pow_scalar(norm, inverse ? 0.5 : -0.5));
    }
};

// Four stride-2 conv encoder (3 -> N -> N -> N -> M, GDN after the first
// three), mirrored transposed-conv decoder, and a per-channel discretized
// logistic entropy model over the latent.
template <class S>
struct CodecModel {
    int n_hidden = 128;
    int m_latent = 192;
    std::vector<Conv2dLayer<S>> enc;           // 4 layers
    std::vector<GdnLayer<S>> enc_gdn;          // 3 layers
    std::vector<ConvTranspose2dLayer<S>> dec;  // 4 layers
    std::vector<GdnLayer<S>> dec_gdn;          // 3 layers, inverse
    Tensor<S> ent_mean;       // [M]
    Tensor<S> ent_log_scale;  // [M]
};

namespace detail {

template <class S>
Conv2dLayer<S> make_conv(ParamStore<S>& store, const std::string& prefix, int cin, int cout, int k,
                         int stride, int pad, Rng& rng, bool frozen) {
    Conv2dLayer<S> l;
    l.w = store.add(prefix + ".weight", kaiming_uniform_conv<S>({cout, cin, k, k}, rng), frozen);
    l.b = store.add(prefix + ".bias", Tensor<S>::zeros({cout}), frozen);
    l.stride = stride;
    l.pad = pad;
    return l;
}

template <class S>
ConvTranspose2dLayer<S> make_deconv(ParamStore<S>& store, const std::string& prefix, int cin,
                                    int cout, int k, int stride, int pad, int out_pad, Rng& rng,
                                    bool frozen) {
    ConvTranspose2dLayer<S> l;
    l.w = store.add(prefix + ".weight", kaiming_uniform_deconv<S>({cin, cout, k, k}, rng), frozen);
    l.b = store.add(prefix + ".bias", Tensor<S>::zeros({cout}), frozen);
    l.stride = stride;
    l.pad = pad;
    l.out_pad = out_pad;
    return l;
}

template <class S>
GdnLayer<S> make_gdn(ParamStore<S>& store, const std::string& prefix, int c, bool inverse,
                     bool frozen) {
    GdnLayer<S> l;
    l.beta = store.add(prefix + ".beta", Tensor<S>::full({c}, S(1)), frozen);
    std::vector<S> g(static_cast<std::size_t>(c) * c, S(0));
    for (int i = 0; i < c; ++i) g[static_cast<std::size_t>(i) * c + i] = static_cast<S>(0.1);
    l.gamma = store.add(prefix + ".gamma", Tensor<S>::from_data({c, c}, std::move(g)), frozen);
    l.inverse = inverse;
    return l;
}

}  // namespace detail

template <class S>
CodecModel<S> make_codec(ParamStore<S>& store, int n_hidden, int m_latent, Rng& rng,
                         bool frozen = false, const std::string& prefix = "codec.") {
    CodecModel<S> m;
    m.n_hidden = n_hidden;
    m.m_latent = m_latent;
    const int chans[5] = {3, n_hidden, n_hidden, n_hidden, m_latent};
    for (int i = 0; i < 4; ++i) {
        m.enc.push_back(detail::make_conv(store, prefix + "enc" + std::to_string(i + 1), chans[i],
                                          chans[i + 1], 5, 2, 2, rng, frozen));
        if (i < 3) {
            m.enc_gdn.push_back(
                detail::make_gdn(store, prefix + "enc_gdn" + std::to_string(i + 1), chans[i + 1],
                                 false, frozen));
        }
    }
    const int dchans[5] = {m_latent, n_hidden, n_hidden, n_hidden, 3};
    for (int i = 0; i < 4; ++i) {
        m.dec.push_back(detail::make_deconv(store, prefix + "dec" + std::to_string(i + 1), dchans[i],
                                            dchans[i + 1], 5, 2, 2, 1, rng, frozen));
        if (i < 3) {
            m.dec_gdn.push_back(
                detail::make_gdn(store, prefix + "dec_gdn" + std::to_string(i + 1), dchans[i + 1],
                                 true, frozen));
        }
    }
    m.ent_mean = store.add(prefix + "entropy.mean", Tensor<S>::zeros({m_latent}), frozen);
    m.ent_log_scale = store.add(prefix + "entropy.log_scale", Tensor<S>::zeros({m_latent}), frozen);
    return m;
}

// Registers the encoder half of an existing codec into another store
// (classifier stores share the encoder tensors, typically frozen).
template <class S>
void register_encoder_params(ParamStore<S>& store, const CodecModel<S>& m, bool frozen,
                             const std::string& prefix = "codec.") {
    for (std::size_t i = 0; i < m.enc.size(); ++i) {
        store.add(prefix + "enc" + std::to_string(i + 1) + ".weight", m.enc[i].w, frozen);
        store.add(prefix + "enc" + std::to_string(i + 1) + ".bias", m.enc[i].b, frozen);
    }
    for (std::size_t i = 0; i < m.enc_gdn.size(); ++i) {
        store.add(prefix + "enc_gdn" + std::to_string(i + 1) + ".beta", m.enc_gdn[i].beta, frozen);
        store.add(prefix + "enc_gdn" + std::to_string(i + 1) + ".gamma", m.enc_gdn[i].gamma, frozen);
    }
}

// x [3,H,W] with H, W multiples of 16 -> latent [M, H/16, W/16].
template <class S>
Tensor<S> encode(const CodecModel<S>& m, const Tensor<S>& x) {
    if (x.rank() != 3 || x.dim(0) != 3) {
        throw DimensionError("encode: expected [3,H,W], got " + shape_str(x.shape()));
    }
    if (x.dim(1) % 16 != 0 || x.dim(2) % 16 != 0) {
        throw DimensionError("encode: input " + shape_str(x.shape()) +
                             " must have H,W multiples of 16; pad the image first");
    }
    Tensor<S> y = x;
    for (std::size_t i = 0; i < m.enc.size(); ++i) {
        y = m.enc[i](y);
        if (i < m.enc_gdn.size()) y = m.enc_gdn[i](y);
    }
    return y;
}

// Eval: elementwise round, half away from zero, detached and idempotent.
// Train: additive Uniform(-0.5, 0.5) noise, gradient passes through.
template <class S>
Tensor<S> quantize(const Tensor<S>& y, QuantMode mode, Rng& rng) {
    if (mode == QuantMode::eval) return round_half_away(y);
    std::vector<S> noise(y.data().size());
    for (auto& v : noise) v = static_cast<S>(rng.uniform(-0.5, 0.5));
    return add(y, Tensor<S>::from_data(y.shape(), std::move(noise)));
}

// Latent [M,h,w] -> [3,16h,16w]. Eval mode clamps to [0,1]; train mode leaves
// the reconstruction unclamped so the distortion gradient is not cut off at
// the pixel-range boundary.
template <class S>
Tensor<S> decode(const CodecModel<S>& m, const Tensor<S>& yhat, QuantMode mode = QuantMode::eval) {
    if (yhat.rank() != 3 || yhat.dim(0) != m.m_latent) {
        throw DimensionError("decode: expected [" + std::to_string(m.m_latent) + ",h,w], got " +
                             shape_str(yhat.shape()));
    }
    Tensor<S> x = yhat;
    for (std::size_t i = 0; i < m.dec.size(); ++i) {
        x = m.dec[i](x);
        if (i < m.dec_gdn.size()) x = m.dec_gdn[i](x);
    }
    return mode == QuantMode::eval ? clamp(x, 0.0, 1.0) : x;
}

// Estimated code length of the quantized latent in bits per pixel of the
// source image: -sum_i log2(CDF_c(y_i + 0.5) - CDF_c(y_i - 0.5)) / num_pixels
// under a per-channel logistic with learned mean and log-scale. Probabilities
// are floored at 1e-9 and log-scale is clamped at log(1e-3).
template <class S>
Tensor<S> rate_bpp(const Tensor<S>& yhat, const Tensor<S>& mean, const Tensor<S>& log_scale,
                   std::int64_t num_pixels) {
    const int m = yhat.dim(0);
    if (mean.dim(0) != m || log_scale.dim(0) != m) {
        throw DimensionError("rate_bpp: entropy params " + shape_str(mean.shape()) + "/" +
                             shape_str(log_scale.shape()) + " vs latent " + shape_str(yhat.shape()));
    }
    auto ls = clamp_min(log_scale, std::log(1e-3));
    auto inv_s = exp_op(neg(ls));  // [M]
    auto half = Tensor<S>::full({m}, static_cast<S>(0.5));
    auto upper = per_channel_affine(yhat, inv_s, mul(inv_s, sub(half, mean)));
    auto lower = per_channel_affine(yhat, inv_s, mul(inv_s, sub(neg(half), mean)));
    auto p = clamp_min(sub(sigmoid(upper), sigmoid(lower)), 1e-9);
    auto bits = scale(sum_all(log_op(p)), -1.0 / std::log(2.0));
    return scale(bits, 1.0 / static_cast<double>(num_pixels));
}

template <class S>
struct RdLossParts {
    Tensor<S> d_mse;
    Tensor<S> r_bpp;
    Tensor<S> total;
    double lambda = 0.0;
};

// Full rate-distortion objective: total = lambda * D_mse + R_bpp.
template <class S>
RdLossParts<S> rd_loss(const CodecModel<S>& m, const Tensor<S>& x, double lambda, QuantMode mode,
                       Rng& rng) {
    if (lambda < 0.0) throw ContractError("rd_loss: lambda must be non-negative");
    auto y = encode(m, x);
    auto yhat = quantize(y, mode, rng);
    auto xhat = decode(m, yhat, mode);
    RdLossParts<S> parts;
    parts.lambda = lambda;
    parts.d_mse = mse(x, xhat);
    parts.r_bpp = rate_bpp(yhat, m.ent_mean, m.ent_log_scale,
                           static_cast<std::int64_t>(x.dim(1)) * x.dim(2));
    parts.total = add(scale(parts.d_mse, lambda), parts.r_bpp);
    return parts;
}

// Projection applied after each optimizer step: GDN stays a valid positive
// normalizer and the logistic scale never collapses.
template <class S>
void project_codec_constraints(CodecModel<S>& m) {
    auto clamp_vec = [](std::vector<S>& v, double lo) {
        for (auto& x : v) {
            if (static_cast<double>(x) < lo) x = static_cast<S>(lo);
        }
    };
    for (auto* layers : {&m.enc_gdn, &m.dec_gdn}) {
        for (auto& g : *layers) {
            clamp_vec(g.beta.data(), 1e-6);
            clamp_vec(g.gamma.data(), 0.0);
        }
    }
    clamp_vec(m.ent_log_scale.data(), std::log(1e-3));
}

// Peak signal-to-noise ratio in dB for [0,1] images; identical images report
// +inf.
template <class S>
double psnr(const Tensor<S>& x, const Tensor<S>& xhat) {
    check_same_shape(x, xhat, "psnr");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        const double d = static_cast<double>(x.data()[i]) - static_cast<double>(xhat.data()[i]);
        acc += d * d;
    }
    const double m = acc / static_cast<double>(x.numel());
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

struct RdScalars {
    double d_mse = 0.0;
    double r_bpp = 0.0;
    double total = 0.0;
};

// Adam training of the rate-distortion objective over a list of images.
// Steps walk a fresh seeded permutation of the dataset each pass.
template <class S>
std::vector<RdScalars> train_codec(CodecModel<S>& m, ParamStore<S>& store,
                                   const std::vector<Tensor<S>>& images, int steps, double lambda,
                                   double lr, std::uint64_t seed) {
    std::vector<RdScalars> history;
    if (steps <= 0 || images.empty()) return history;
    Rng noise_rng(seed);
    Rng perm_rng = noise_rng.fork(1);
    std::vector<int> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    perm_rng.shuffle(order);
    std::size_t cursor = 0;
    for (int step = 1; step <= steps; ++step) {
        if (cursor == order.size()) {
            perm_rng.shuffle(order);
            cursor = 0;
        }
        const Tensor<S>& x = images[static_cast<std::size_t>(order[cursor++])];
        auto parts = rd_loss(m, x, lambda, QuantMode::train, noise_rng);
        if (!parts.total.all_finite()) {
            throw NumericError("train_codec: non-finite loss at step " + std::to_string(step) +
                               " (first non-finite node: " + first_nonfinite_node(parts.total) + ")");
        }
        parts.total.backward();
        store.adam_step(lr, 0.9, 0.999, 1e-8, step);
        project_codec_constraints(m);
        history.push_back({static_cast<double>(parts.d_mse.item()),
                           static_cast<double>(parts.r_bpp.item()),
                           static_cast<double>(parts.total.item())});
    }
    return history;
}

}  // namespace ci2p
