#pragma once

#include <cmath>

#include "ci2p/rng.hpp"
#include "ci2p/tensor.hpp"

namespace ci2p {

// Truncated normal (|z| <= 2 sigma); linear/attention weights and positional
// embeddings use std 0.02.
template <class S>
Tensor<S> trunc_normal_init(Shape shape, double stddev, Rng& rng) {
    std::vector<S> data(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : data) v = static_cast<S>(rng.trunc_normal(stddev));
    return Tensor<S>::from_data(std::move(shape), std::move(data));
}

// Kaiming fan-in uniform for conv weights [Cout, Cin/g, kh, kw].
template <class S>
Tensor<S> kaiming_uniform_conv(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
    const double limit = std::sqrt(6.0 / fan_in);
    std::vector<S> data(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : data) v = static_cast<S>(rng.uniform(-limit, limit));
    return Tensor<S>::from_data(std::move(shape), std::move(data));
}

// Same rule for transposed-conv weights [Cin, Cout, kh, kw]; fan-in is the
// contraction size Cin*kh*kw.
template <class S>
Tensor<S> kaiming_uniform_deconv(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[0]) * shape[2] * shape[3];
    const double limit = std::sqrt(6.0 / fan_in);
    std::vector<S> data(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : data) v = static_cast<S>(rng.uniform(-limit, limit));
    return Tensor<S>::from_data(std::move(shape), std::move(data));
}

}  // namespace ci2p
