#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ci2p/ops.hpp"
#include "ci2p/tensor.hpp"

namespace ci2p {

// Central-difference check of df/dx at `point`. Runs in whatever precision S
// the caller instantiates; only double gives meaningful tolerances.
// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
template <class S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& point,
                  double h) {
    Tensor<S> x = Tensor<S>::from_data(point.shape(), point.data(), true);
    Tensor<S> loss = f(x);
    loss.backward();
    std::vector<S> analytic = x.grad();

    double worst = 0.0;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        const S orig = x.data()[i];
        x.data()[i] = static_cast<S>(static_cast<double>(orig) + h);
        const double fp = static_cast<double>(f(x).item());
        x.data()[i] = static_cast<S>(static_cast<double>(orig) - h);
        const double fm = static_cast<double>(f(x).item());
        x.data()[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = static_cast<double>(analytic[i]);
        const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

// Variant for checking a loss w.r.t. an existing parameter tensor: `loss_fn`
// rebuilds the forward graph on every call, `wrt` is perturbed in place at the
// listed coordinates (all coordinates if `coords` is empty).
template <class S>
double grad_check_param(const std::function<Tensor<S>()>& loss_fn, Tensor<S> wrt, double h,
                        std::vector<std::int64_t> coords = {}) {
    wrt.zero_grad();
    Tensor<S> loss = loss_fn();
    loss.backward();
    std::vector<S> analytic = wrt.grad();
    wrt.zero_grad();

    if (coords.empty()) {
        for (std::int64_t i = 0; i < wrt.numel(); ++i) coords.push_back(i);
    }
    double worst = 0.0;
    for (std::int64_t ci : coords) {
        const std::size_t i = static_cast<std::size_t>(ci);
        const S orig = wrt.data()[i];
        wrt.data()[i] = static_cast<S>(static_cast<double>(orig) + h);
        const double fp = static_cast<double>(loss_fn().item());
        wrt.data()[i] = static_cast<S>(static_cast<double>(orig) - h);
        const double fm = static_cast<double>(loss_fn().item());
        wrt.data()[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = static_cast<double>(analytic[i]);
        const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace ci2p
