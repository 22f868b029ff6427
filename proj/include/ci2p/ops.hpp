#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ci2p/tensor.hpp"

namespace ci2p {

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "add");
    std::vector<S> out = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto t = detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, "add");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node(), pb = b.node();
        t.node()->backward_fn = [self, pa, pb] {
            detail::accum(pa, self->grad);
            detail::accum(pb, self->grad);
        };
    }
    return t;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "sub");
    std::vector<S> out = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto t = detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, "sub");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node(), pb = b.node();
        t.node()->backward_fn = [self, pa, pb] {
            detail::accum(pa, self->grad);
            if (pb->requires_grad) {
                for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] -= self->grad[i];
            }
        };
    }
    return t;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mul");
    std::vector<S> out = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto t = detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()}, "mul");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node(), pb = b.node();
        t.node()->backward_fn = [self, pa, pb] {
            if (pa->requires_grad) {
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pa->grad[i] += self->grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pb->grad[i] += self->grad[i] * pa->data[i];
            }
        };
    }
    return t;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    std::vector<S> out = a.data();
    for (auto& v : out) v = static_cast<S>(v * c);
    auto t = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, "scale");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node();
        t.node()->backward_fn = [self, pa, c] {
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                pa->grad[i] += static_cast<S>(self->grad[i] * c);
        };
    }
    return t;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
    return scale(a, -1.0);
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, double c) {
    std::vector<S> out = a.data();
    for (auto& v : out) v = static_cast<S>(v + c);
    auto t = detail::make_result<S>(a.shape(), std::move(out), {a.node()}, "add_scalar");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node();
        t.node()->backward_fn = [self, pa] { detail::accum(pa, self->grad); };
    }
    return t;
}

// Broadcast a length-D bias over the rows of an [N, D] tensor.
template <class S>
Tensor<S> add_bias_rows(const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_bias_rows: expected [N,D] + [D], got " + shape_str(x.shape()) +
                             " + " + shape_str(bias.shape()));
    }
    const int n = x.dim(0), d = x.dim(1);
    std::vector<S> out = x.data();
    const auto& bd = bias.data();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(r) * d + c] += bd[c];
    auto t = detail::make_result<S>(x.shape(), std::move(out), {x.node(), bias.node()}, "add_bias_rows");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node(), pb = bias.node();
        t.node()->backward_fn = [self, px, pb, n, d] {
            detail::accum(px, self->grad);
            if (pb->requires_grad) {
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c)
                        pb->grad[c] += self->grad[static_cast<std::size_t>(r) * d + c];
            }
        };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const S av = ad[static_cast<std::size_t>(i) * k + p];
            const S* brow = &bd[static_cast<std::size_t>(p) * n];
            S* orow = &out[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    auto t = detail::make_result<S>({m, n}, std::move(out), {a.node(), b.node()}, "matmul");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node(), pb = b.node();
        t.node()->backward_fn = [self, pa, pb, m, k, n] {
            // dA = dC * B^T, dB = A^T * dC
            if (pa->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        S acc = S(0);
                        for (int j = 0; j < n; ++j)
                            acc += self->grad[static_cast<std::size_t>(i) * n + j] *
                                   pb->data[static_cast<std::size_t>(p) * n + j];
                        pa->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (pb->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const S av = pa->data[static_cast<std::size_t>(i) * k + p];
                        for (int j = 0; j < n; ++j)
                            pb->grad[static_cast<std::size_t>(p) * n + j] +=
                                av * self->grad[static_cast<std::size_t>(i) * n + j];
                    }
            }
        };
    }
    return t;
}

template <class S>
Tensor<S> transpose2(const Tensor<S>& a) {
    if (a.rank() != 2) throw DimensionError("transpose2: expected rank 2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    const auto& ad = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = ad[static_cast<std::size_t>(i) * n + j];
    auto t = detail::make_result<S>({n, m}, std::move(out), {a.node()}, "transpose2");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pa = a.node();
        t.node()->backward_fn = [self, pa, m, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    pa->grad[static_cast<std::size_t>(i) * n + j] +=
                        self->grad[static_cast<std::size_t>(j) * m + i];
        };
    }
    return t;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int start, int count) {
    if (x.rank() != 2) throw DimensionError("slice_cols: expected rank 2, got " + shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    if (start < 0 || count <= 0 || start + count > d) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") out of " + std::to_string(d));
    }
    std::vector<S> out(static_cast<std::size_t>(n) * count);
    const auto& xd = x.data();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < count; ++c)
            out[static_cast<std::size_t>(r) * count + c] =
                xd[static_cast<std::size_t>(r) * d + start + c];
    auto t = detail::make_result<S>({n, count}, std::move(out), {x.node()}, "slice_cols");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px, n, d, start, count] {
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < count; ++c)
                    px->grad[static_cast<std::size_t>(r) * d + start + c] +=
                        self->grad[static_cast<std::size_t>(r) * count + c];
        };
    }
    return t;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const int n = parts[0].dim(0);
    int d = 0;
    std::vector<NodePtr<S>> parents;
    std::vector<int> widths;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        widths.push_back(p.dim(1));
        d += p.dim(1);
        parents.push_back(p.node());
    }
    std::vector<S> out(static_cast<std::size_t>(n) * d);
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pd = parts[k].data();
        const int w = widths[k];
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c)
                out[static_cast<std::size_t>(r) * d + off + c] =
                    pd[static_cast<std::size_t>(r) * w + c];
        off += w;
    }
    auto t = detail::make_result<S>({n, d}, std::move(out), parents, "concat_cols");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto ps = t.node()->parents;
        t.node()->backward_fn = [self, ps, widths, n, d] {
            int o = 0;
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const int w = widths[k];
                if (ps[k]->requires_grad) {
                    for (int r = 0; r < n; ++r)
                        for (int c = 0; c < w; ++c)
                            ps[k]->grad[static_cast<std::size_t>(r) * w + c] +=
                                self->grad[static_cast<std::size_t>(r) * d + o + c];
                }
                o += w;
            }
        };
    }
    return t;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    }
    auto t = detail::make_result<S>(std::move(new_shape), x.data(), {x.node()}, "reshape");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px] { detail::accum(px, self->grad); };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Cross-correlation over [Cin,H,W] with weight [Cout,Cin/groups,kh,kw].
// Bias may be an undefined Tensor.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride,
                 int pad, int groups) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw DimensionError("conv2d: expected input [Cin,H,W] and weight [Cout,Cin/g,kh,kw], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (groups < 1 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g) {
        throw DimensionError("conv2d: group mismatch, input " + shape_str(x.shape()) + " weight " +
                             shape_str(w.shape()) + " groups " + std::to_string(groups));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()));
    }
    const int hout = (h + 2 * pad - kh) / stride + 1;
    const int wout = (wd + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad - kh < 0 || wd + 2 * pad - kw < 0 || hout < 1 || wout < 1) {
        throw DimensionError("conv2d: non-positive output size for input " + shape_str(x.shape()) +
                             " kernel " + shape_str(w.shape()) + " stride " + std::to_string(stride) +
                             " pad " + std::to_string(pad));
    }
    const int cout_g = cout / groups;
    std::vector<S> out(static_cast<std::size_t>(cout) * hout * wout, S(0));
    const auto& xd = x.data();
    const auto& wdat = w.data();
    for (int co = 0; co < cout; ++co) {
        const int g = co / cout_g;
        const S b = bias.defined() ? bias.data()[static_cast<std::size_t>(co)] : S(0);
        for (int oh = 0; oh < hout; ++oh) {
            for (int ow = 0; ow < wout; ++ow) {
                S acc = b;
                for (int cg = 0; cg < cin_g; ++cg) {
                    const int ci = g * cin_g + cg;
                    for (int r = 0; r < kh; ++r) {
                        const int ih = oh * stride + r - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int c = 0; c < kw; ++c) {
                            const int iw = ow * stride + c - pad;
                            if (iw < 0 || iw >= wd) continue;
                            acc += xd[(static_cast<std::size_t>(ci) * h + ih) * wd + iw] *
                                   wdat[((static_cast<std::size_t>(co) * cin_g + cg) * kh + r) * kw + c];
                        }
                    }
                }
                out[(static_cast<std::size_t>(co) * hout + oh) * wout + ow] = acc;
            }
        }
    }
    std::vector<NodePtr<S>> parents{x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto t = detail::make_result<S>({cout, hout, wout}, std::move(out), parents, "conv2d");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node(), pw = w.node();
        NodePtr<S> pb = bias.defined() ? bias.node() : nullptr;
        t.node()->backward_fn = [self, px, pw, pb, cin_g, cout_g, cout, h, wd, kh, kw, stride, pad,
                                 hout, wout] {
            for (int co = 0; co < cout; ++co) {
                const int g = co / cout_g;
                for (int oh = 0; oh < hout; ++oh) {
                    for (int ow = 0; ow < wout; ++ow) {
                        const S go = self->grad[(static_cast<std::size_t>(co) * hout + oh) * wout + ow];
                        if (pb && pb->requires_grad) pb->grad[static_cast<std::size_t>(co)] += go;
                        for (int cg = 0; cg < cin_g; ++cg) {
                            const int ci = g * cin_g + cg;
                            for (int r = 0; r < kh; ++r) {
                                const int ih = oh * stride + r - pad;
                                if (ih < 0 || ih >= h) continue;
                                for (int c = 0; c < kw; ++c) {
                                    const int iw = ow * stride + c - pad;
                                    if (iw < 0 || iw >= wd) continue;
                                    const std::size_t xi =
                                        (static_cast<std::size_t>(ci) * h + ih) * wd + iw;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(co) * cin_g + cg) * kh + r) * kw + c;
                                    if (px->requires_grad) px->grad[xi] += go * pw->data[wi];
                                    if (pw->requires_grad) pw->grad[wi] += go * px->data[xi];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return t;
}

// Transposed convolution (gradient of conv2d w.r.t. its input), weight layout
// [Cin,Cout,kh,kw]. Output size (H-1)*stride - 2*pad + kh + out_pad.
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                           int stride, int pad, int out_pad) {
    if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(0)) {
        throw DimensionError("conv_transpose2d: input " + shape_str(x.shape()) + " weight " +
                             shape_str(w.shape()));
    }
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const int hout = (h - 1) * stride - 2 * pad + kh + out_pad;
    const int wout = (wd - 1) * stride - 2 * pad + kw + out_pad;
    if (hout < 1 || wout < 1) {
        throw DimensionError("conv_transpose2d: non-positive output size");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw DimensionError("conv_transpose2d: bias shape " + shape_str(bias.shape()));
    }
    std::vector<S> out(static_cast<std::size_t>(cout) * hout * wout, S(0));
    if (bias.defined()) {
        for (int co = 0; co < cout; ++co)
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(co) * hout * wout, hout * wout,
                        bias.data()[static_cast<std::size_t>(co)]);
    }
    const auto& xd = x.data();
    const auto& wdat = w.data();
    for (int ci = 0; ci < cin; ++ci) {
        for (int ih = 0; ih < h; ++ih) {
            for (int iw = 0; iw < wd; ++iw) {
                const S xv = xd[(static_cast<std::size_t>(ci) * h + ih) * wd + iw];
                for (int co = 0; co < cout; ++co) {
                    for (int r = 0; r < kh; ++r) {
                        const int oh = ih * stride - pad + r;
                        if (oh < 0 || oh >= hout) continue;
                        for (int c = 0; c < kw; ++c) {
                            const int ow = iw * stride - pad + c;
                            if (ow < 0 || ow >= wout) continue;
                            out[(static_cast<std::size_t>(co) * hout + oh) * wout + ow] +=
                                xv * wdat[((static_cast<std::size_t>(ci) * cout + co) * kh + r) * kw + c];
                        }
                    }
                }
            }
        }
    }
    std::vector<NodePtr<S>> parents{x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    auto t = detail::make_result<S>({cout, hout, wout}, std::move(out), parents, "conv_transpose2d");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node(), pw = w.node();
        NodePtr<S> pb = bias.defined() ? bias.node() : nullptr;
        t.node()->backward_fn = [self, px, pw, pb, cin, cout, h, wd, kh, kw, stride, pad, hout,
                                 wout] {
            if (pb && pb->requires_grad) {
                for (int co = 0; co < cout; ++co)
                    for (int o = 0; o < hout * wout; ++o)
                        pb->grad[static_cast<std::size_t>(co)] +=
                            self->grad[static_cast<std::size_t>(co) * hout * wout + o];
            }
            for (int ci = 0; ci < cin; ++ci) {
                for (int ih = 0; ih < h; ++ih) {
                    for (int iw = 0; iw < wd; ++iw) {
                        const std::size_t xi = (static_cast<std::size_t>(ci) * h + ih) * wd + iw;
                        for (int co = 0; co < cout; ++co) {
                            for (int r = 0; r < kh; ++r) {
                                const int oh = ih * stride - pad + r;
                                if (oh < 0 || oh >= hout) continue;
                                for (int c = 0; c < kw; ++c) {
                                    const int ow = iw * stride - pad + c;
                                    if (ow < 0 || ow >= wout) continue;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(ci) * cout + co) * kh + r) * kw + c;
                                    const S go =
                                        self->grad[(static_cast<std::size_t>(co) * hout + oh) * wout + ow];
                                    if (px->requires_grad) px->grad[xi] += go * pw->data[wi];
                                    if (pw->requires_grad) pw->grad[wi] += go * px->data[xi];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class Fwd, class Dfn>
Tensor<S> unary_op(const Tensor<S>& x, Fwd f, Dfn df, const char* name) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
    auto t = make_result<S>(x.shape(), std::move(out), {x.node()}, name);
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px, df] {
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                px->grad[i] += self->grad[i] * df(px->data[i]);
        };
    }
    return t;
}

}  // namespace detail

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    auto fwd = [](S v) {
        const double xd = static_cast<double>(v);
        return static_cast<S>(0.5 * xd * (1.0 + std::tanh(k * (xd + a * xd * xd * xd))));
    };
    auto dfn = [](S v) {
        const double xd = static_cast<double>(v);
        const double u = k * (xd + a * xd * xd * xd);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * a * xd * xd);
        return static_cast<S>(0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * du);
    };
    return detail::unary_op(x, fwd, dfn, "gelu");
}

template <class S>
Tensor<S> relu6(const Tensor<S>& x) {
    auto fwd = [](S v) { return std::min(std::max(v, S(0)), S(6)); };
    auto dfn = [](S v) { return (v > S(0) && v < S(6)) ? S(1) : S(0); };
    return detail::unary_op(x, fwd, dfn, "relu6");
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto fwd = [](S v) { return static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); };
    auto dfn = [](S v) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
        return static_cast<S>(s * (1.0 - s));
    };
    return detail::unary_op(x, fwd, dfn, "sigmoid");
}

template <class S>
Tensor<S> exp_op(const Tensor<S>& x) {
    auto fwd = [](S v) { return static_cast<S>(std::exp(static_cast<double>(v))); };
    auto dfn = [](S v) { return static_cast<S>(std::exp(static_cast<double>(v))); };
    return detail::unary_op(x, fwd, dfn, "exp");
}

template <class S>
Tensor<S> log_op(const Tensor<S>& x) {
    auto fwd = [](S v) { return static_cast<S>(std::log(static_cast<double>(v))); };
    auto dfn = [](S v) { return static_cast<S>(1.0 / static_cast<double>(v)); };
    return detail::unary_op(x, fwd, dfn, "log");
}

// y = x^p on positive inputs.
template <class S>
Tensor<S> pow_scalar(const Tensor<S>& x, double p) {
    auto fwd = [p](S v) { return static_cast<S>(std::pow(static_cast<double>(v), p)); };
    auto dfn = [p](S v) { return static_cast<S>(p * std::pow(static_cast<double>(v), p - 1.0)); };
    return detail::unary_op(x, fwd, dfn, "pow_scalar");
}

// Gradient passes only strictly inside (lo, hi).
template <class S>
Tensor<S> clamp(const Tensor<S>& x, double lo, double hi) {
    auto fwd = [lo, hi](S v) {
        return static_cast<S>(std::min(hi, std::max(lo, static_cast<double>(v))));
    };
    auto dfn = [lo, hi](S v) {
        const double d = static_cast<double>(v);
        return (d > lo && d < hi) ? S(1) : S(0);
    };
    return detail::unary_op(x, fwd, dfn, "clamp");
}

template <class S>
Tensor<S> clamp_min(const Tensor<S>& x, double lo) {
    return clamp(x, lo, std::numeric_limits<double>::infinity());
}

// Deterministic rounding, half away from zero; result is detached from the tape.
template <class S>
Tensor<S> round_half_away(const Tensor<S>& x) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<S>(std::round(static_cast<double>(x.data()[i])));
    return Tensor<S>::from_data(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Reductions, normalization, softmax
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.data()) acc += v;
    auto t = detail::make_result<S>({1}, {acc}, {x.node()}, "sum");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px] {
            const S g = self->grad[0];
            for (auto& v : px->grad) v += g;
        };
    }
    return t;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// Column means of [N, D] -> [D]; used for GAP over tokens.
template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    if (x.rank() != 2) throw DimensionError("mean_rows: expected [N,D], got " + shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(d), S(0));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out[c] += x.data()[static_cast<std::size_t>(r) * d + c];
    for (auto& v : out) v = static_cast<S>(v / static_cast<double>(n));
    auto t = detail::make_result<S>({d}, std::move(out), {x.node()}, "mean_rows");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px, n, d] {
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c)
                    px->grad[static_cast<std::size_t>(r) * d + c] +=
                        static_cast<S>(self->grad[c] / static_cast<double>(n));
        };
    }
    return t;
}

// Softmax over the last axis with max subtraction.
template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    if (x.rank() < 1) throw DimensionError("softmax: scalar input");
    const int l = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / l;
    std::vector<S> out(x.data().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* in = &x.data()[static_cast<std::size_t>(r) * l];
        S* o = &out[static_cast<std::size_t>(r) * l];
        S mx = in[0];
        for (int i = 1; i < l; ++i) mx = std::max(mx, in[i]);
        double z = 0.0;
        for (int i = 0; i < l; ++i) {
            o[i] = static_cast<S>(std::exp(static_cast<double>(in[i] - mx)));
            z += static_cast<double>(o[i]);
        }
        for (int i = 0; i < l; ++i) o[i] = static_cast<S>(o[i] / z);
    }
    auto t = detail::make_result<S>(x.shape(), std::move(out), {x.node()}, "softmax");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px, rows, l] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* y = &self->data[static_cast<std::size_t>(r) * l];
                const S* gy = &self->grad[static_cast<std::size_t>(r) * l];
                double dot = 0.0;
                for (int i = 0; i < l; ++i) dot += static_cast<double>(gy[i]) * y[i];
                for (int i = 0; i < l; ++i)
                    px->grad[static_cast<std::size_t>(r) * l + i] +=
                        static_cast<S>(y[i] * (static_cast<double>(gy[i]) - dot));
            }
        };
    }
    return t;
}

// Row-wise layer normalization of [N, D].
template <class S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                    double eps) {
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.dim(0) != x.dim(1)) {
        throw DimensionError("layernorm: shapes " + shape_str(x.shape()) + ", " +
                             shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
    }
    if (eps <= 0.0) throw ContractError("layernorm: eps must be positive");
    const int n = x.dim(0), d = x.dim(1);
    std::vector<S> out(x.data().size());
    std::vector<S> xhat(x.data().size());
    std::vector<double> inv_std(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        const S* in = &x.data()[static_cast<std::size_t>(r) * d];
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += static_cast<double>(in[c]);
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double v = static_cast<double>(in[c]) - mean;
            var += v * v;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = istd;
        for (int c = 0; c < d; ++c) {
            const double h = (static_cast<double>(in[c]) - mean) * istd;
            xhat[static_cast<std::size_t>(r) * d + c] = static_cast<S>(h);
            out[static_cast<std::size_t>(r) * d + c] =
                static_cast<S>(h * static_cast<double>(gamma.data()[c]) +
                               static_cast<double>(beta.data()[c]));
        }
    }
    auto t = detail::make_result<S>(x.shape(), std::move(out),
                                    {x.node(), gamma.node(), beta.node()}, "layernorm");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node(), pg = gamma.node(), pb = beta.node();
        t.node()->backward_fn = [self, px, pg, pb, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std), n, d] {
            for (int r = 0; r < n; ++r) {
                const S* gy = &self->grad[static_cast<std::size_t>(r) * d];
                const S* xh = &xhat[static_cast<std::size_t>(r) * d];
                if (pg->requires_grad || pb->requires_grad) {
                    for (int c = 0; c < d; ++c) {
                        if (pg->requires_grad) pg->grad[c] += gy[c] * xh[c];
                        if (pb->requires_grad) pb->grad[c] += gy[c];
                    }
                }
                if (px->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double gyc = static_cast<double>(gy[c]) * pg->data[c];
                        m1 += gyc;
                        m2 += gyc * xh[c];
                    }
                    m1 /= d;
                    m2 /= d;
                    const double istd = inv_std[static_cast<std::size_t>(r)];
                    for (int c = 0; c < d; ++c) {
                        const double gyc = static_cast<double>(gy[c]) * pg->data[c];
                        px->grad[static_cast<std::size_t>(r) * d + c] +=
                            static_cast<S>((gyc - m1 - xh[c] * m2) * istd);
                    }
                }
            }
        };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Channel broadcasting (entropy model)
// ---------------------------------------------------------------------------

// y[c,h,w] = a[c] * x[c,h,w] + b[c]
template <class S>
Tensor<S> per_channel_affine(const Tensor<S>& x, const Tensor<S>& a, const Tensor<S>& b) {
    if (x.rank() != 3 || a.rank() != 1 || b.rank() != 1 || a.dim(0) != x.dim(0) ||
        b.dim(0) != x.dim(0)) {
        throw DimensionError("per_channel_affine: shapes " + shape_str(x.shape()) + ", " +
                             shape_str(a.shape()) + ", " + shape_str(b.shape()));
    }
    const int ch = x.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
    std::vector<S> out(x.data().size());
    for (int c = 0; c < ch; ++c) {
        const S ac = a.data()[static_cast<std::size_t>(c)];
        const S bc = b.data()[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < hw; ++i) {
            const std::size_t idx = static_cast<std::size_t>(c) * hw + i;
            out[idx] = ac * x.data()[idx] + bc;
        }
    }
    auto t = detail::make_result<S>(x.shape(), std::move(out), {x.node(), a.node(), b.node()},
                                    "per_channel_affine");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node(), pa = a.node(), pb = b.node();
        t.node()->backward_fn = [self, px, pa, pb, ch, hw] {
            for (int c = 0; c < ch; ++c) {
                for (std::int64_t i = 0; i < hw; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(c) * hw + i;
                    const S g = self->grad[idx];
                    if (px->requires_grad) px->grad[idx] += g * pa->data[static_cast<std::size_t>(c)];
                    if (pa->requires_grad)
                        pa->grad[static_cast<std::size_t>(c)] += g * px->data[idx];
                    if (pb->requires_grad) pb->grad[static_cast<std::size_t>(c)] += g;
                }
            }
        };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Tokenization reshapes
// ---------------------------------------------------------------------------

// Non-overlapping p x p patches of [C,H,W] -> [N, C*p*p], rows in row-major
// grid order, features ordered (channel, py, px).
template <class S>
Tensor<S> patchify(const Tensor<S>& x, int p) {
    if (x.rank() != 3) throw DimensionError("patchify: expected [C,H,W], got " + shape_str(x.shape()));
    const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % p != 0 || w % p != 0) {
        throw DimensionError("patchify: " + shape_str(x.shape()) + " not divisible by patch " +
                             std::to_string(p));
    }
    const int gr = h / p, gc = w / p;
    const int feat = ch * p * p;
    std::vector<S> out(static_cast<std::size_t>(gr) * gc * feat);
    for (int r = 0; r < gr; ++r)
        for (int c = 0; c < gc; ++c) {
            S* row = &out[(static_cast<std::size_t>(r) * gc + c) * feat];
            int f = 0;
            for (int cc = 0; cc < ch; ++cc)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        row[f++] = x.data()[(static_cast<std::size_t>(cc) * h + r * p + py) * w +
                                            c * p + px];
        }
    auto t = detail::make_result<S>({gr * gc, feat}, std::move(out), {x.node()}, "patchify");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px_n = x.node();
        t.node()->backward_fn = [self, px_n, ch, h, w, p, gr, gc, feat] {
            for (int r = 0; r < gr; ++r)
                for (int c = 0; c < gc; ++c) {
                    const S* row = &self->grad[(static_cast<std::size_t>(r) * gc + c) * feat];
                    int f = 0;
                    for (int cc = 0; cc < ch; ++cc)
                        for (int py = 0; py < p; ++py)
                            for (int pxi = 0; pxi < p; ++pxi)
                                px_n->grad[(static_cast<std::size_t>(cc) * h + r * p + py) * w +
                                           c * p + pxi] += row[f++];
                }
        };
    }
    return t;
}

// [C, rows, cols] -> tokens [rows*cols, C], row-major over the grid.
template <class S>
Tensor<S> chw_to_tokens(const Tensor<S>& x) {
    if (x.rank() != 3) throw DimensionError("chw_to_tokens: expected [C,h,w], got " + shape_str(x.shape()));
    const int ch = x.dim(0), rows = x.dim(1), cols = x.dim(2);
    const int n = rows * cols;
    std::vector<S> out(static_cast<std::size_t>(n) * ch);
    for (int c = 0; c < ch; ++c)
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i) * ch + c] = x.data()[static_cast<std::size_t>(c) * n + i];
    auto t = detail::make_result<S>({n, ch}, std::move(out), {x.node()}, "chw_to_tokens");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = x.node();
        t.node()->backward_fn = [self, px, ch, n] {
            for (int c = 0; c < ch; ++c)
                for (int i = 0; i < n; ++i)
                    px->grad[static_cast<std::size_t>(c) * n + i] +=
                        self->grad[static_cast<std::size_t>(i) * ch + c];
        };
    }
    return t;
}

// tokens [rows*cols, C] -> [C, rows, cols]; inverse of chw_to_tokens.
template <class S>
Tensor<S> tokens_to_chw(const Tensor<S>& tokens, int rows, int cols) {
    if (tokens.rank() != 2 || tokens.dim(0) != rows * cols) {
        throw DimensionError("tokens_to_chw: tokens " + shape_str(tokens.shape()) + " vs grid " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
    const int n = rows * cols, ch = tokens.dim(1);
    std::vector<S> out(static_cast<std::size_t>(ch) * n);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < ch; ++c)
            out[static_cast<std::size_t>(c) * n + i] =
                tokens.data()[static_cast<std::size_t>(i) * ch + c];
    auto t = detail::make_result<S>({ch, rows, cols}, std::move(out), {tokens.node()}, "tokens_to_chw");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto px = tokens.node();
        t.node()->backward_fn = [self, px, ch, n] {
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < ch; ++c)
                    px->grad[static_cast<std::size_t>(i) * ch + c] +=
                        self->grad[static_cast<std::size_t>(c) * n + i];
        };
    }
    return t;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mse");
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// -log softmax(logits)[label] in stable log-sum-exp form; backward is the
// analytic softmax(logits) - onehot(label).
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, int label) {
    if (logits.rank() != 1) {
        throw DimensionError("cross_entropy: expected rank-1 logits, got " + shape_str(logits.shape()));
    }
    const int k = logits.dim(0);
    if (label < 0 || label >= k) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " out of [0," +
                            std::to_string(k) + ")");
    }
    double mx = static_cast<double>(logits.data()[0]);
    for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(logits.data()[i]));
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += std::exp(static_cast<double>(logits.data()[i]) - mx);
    const double lse = mx + std::log(z);
    const double loss = lse - static_cast<double>(logits.data()[static_cast<std::size_t>(label)]);
    auto t = detail::make_result<S>({1}, {static_cast<S>(loss)}, {logits.node()}, "cross_entropy");
    if (t.requires_grad()) {
        auto self = t.node().get();
        auto pl = logits.node();
        t.node()->backward_fn = [self, pl, label, k, mx, z] {
            const S g = self->grad[0];
            for (int i = 0; i < k; ++i) {
                const double p = std::exp(static_cast<double>(pl->data[static_cast<std::size_t>(i)]) - mx) / z;
                pl->grad[static_cast<std::size_t>(i)] +=
                    static_cast<S>(g * (p - (i == label ? 1.0 : 0.0)));
            }
        };
    }
    return t;
}

}  // namespace ci2p
