#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ci2p/grad_check.hpp"
#include "ci2p/init.hpp"
#include "ci2p/ops.hpp"
#include "ci2p/param_store.hpp"
#include "ci2p/rng.hpp"

using namespace ci2p;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor<double>::from_data(std::move(shape), std::move(d));
}

// Independent triple-nested-loop matmul oracle.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p)
                c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

// Direct 6-loop convolution oracle, no grouping shortcuts beyond the contract.
std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                const std::vector<double>* bias, int cin, int h, int wd, int cout,
                                int kh, int kw, int stride, int pad, int groups) {
    const int hout = (h + 2 * pad - kh) / stride + 1;
    const int wout = (wd + 2 * pad - kw) / stride + 1;
    const int cin_g = cin / groups, cout_g = cout / groups;
    std::vector<double> out(static_cast<std::size_t>(cout) * hout * wout, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int oh = 0; oh < hout; ++oh)
            for (int ow = 0; ow < wout; ++ow) {
                double acc = bias ? (*bias)[co] : 0.0;
                for (int cg = 0; cg < cin_g; ++cg)
                    for (int r = 0; r < kh; ++r)
                        for (int c = 0; c < kw; ++c) {
                            const int ci = (co / cout_g) * cin_g + cg;
                            const int ih = oh * stride + r - pad;
                            const int iw = ow * stride + c - pad;
                            if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                            acc += x[(ci * h + ih) * wd + iw] *
                                   w[((co * cin_g + cg) * kh + r) * kw + c];
                        }
                out[(co * hout + oh) * wout + ow] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("matmul identity leaves operand unchanged") {
    auto eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(1);
    auto b = random_tensor({3, 2}, rng);
    auto c = matmul(eye, b);
    for (std::size_t i = 0; i < b.data().size(); ++i) CHECK(c.data()[i] == doctest::Approx(b.data()[i]));
}

TEST_CASE("matmul hand example") {
    auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from_data({2, 1}, {5, 6});
    auto c = matmul(a, b);
    CHECK(c.data()[0] == doctest::Approx(17));
    CHECK(c.data()[1] == doctest::Approx(39));
}

TEST_CASE("matmul matches naive loop oracle") {
    Rng rng(42);
    auto a = random_tensor({4, 5}, rng);
    auto b = random_tensor({5, 3}, rng);
    auto c = matmul(a, b);
    auto expect = matmul_oracle(a.data(), b.data(), 4, 5, 3);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::abs(c.data()[i] - expect[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
}

TEST_CASE("conv2d scalar kernel doubles input") {
    auto x = Tensor<double>::full({1, 3, 3}, 1.0);
    auto w = Tensor<double>::from_data({1, 1, 1, 1}, {2.0});
    auto y = conv2d(x, w, Tensor<double>(), 1, 0, 1);
    CHECK(y.shape() == Shape{1, 3, 3});
    for (double v : y.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d all-ones 2x2 stride 2 equals window sums") {
    Rng rng(5);
    auto x = random_tensor({1, 4, 4}, rng);
    auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto y = conv2d(x, w, Tensor<double>(), 2, 0, 1);
    CHECK(y.shape() == Shape{1, 2, 2});
    const auto& d = x.data();
    CHECK(y.data()[0] == doctest::Approx(d[0] + d[1] + d[4] + d[5]));
    CHECK(y.data()[3] == doctest::Approx(d[10] + d[11] + d[14] + d[15]));
}

TEST_CASE("conv2d matches direct oracle with stride and padding") {
    Rng rng(7);
    auto x = random_tensor({3, 8, 8}, rng);
    auto w = random_tensor({4, 3, 5, 5}, rng);
    auto y = conv2d(x, w, Tensor<double>(), 2, 2, 1);
    CHECK(y.shape() == Shape{4, 4, 4});
    auto expect = conv_oracle(x.data(), w.data(), nullptr, 3, 8, 8, 4, 5, 5, 2, 2, 1);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(y.data()[i] - expect[i]) < 1e-10);
}

TEST_CASE("conv2d rejects non-positive output size") {
    auto x = Tensor<double>::zeros({1, 2, 2});
    auto w = Tensor<double>::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, Tensor<double>(), 1, 0, 1), DimensionError);
}

TEST_CASE("conv2d oracle equivalence over random instances incl. groups") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const int groups = 1 + static_cast<int>(rng.below(2)) * 2;  // 1 or 3
        const int cin = 3 * (1 + static_cast<int>(rng.below(2)));
        const int cout = groups * (1 + static_cast<int>(rng.below(3)));
        const int k = 1 + static_cast<int>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(2));
        const int h = k + static_cast<int>(rng.below(5));
        auto x = random_tensor({cin, h, h}, rng);
        auto w = random_tensor({cout, cin / groups, k, k}, rng);
        auto b = random_tensor({cout}, rng);
        auto y = conv2d(x, w, b, stride, pad, groups);
        std::vector<double> bias = b.data();
        auto expect = conv_oracle(x.data(), w.data(), &bias, cin, h, h, cout, k, k, stride, pad, groups);
        REQUIRE(y.data().size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(std::abs(y.data()[i] - expect[i]) < 1e-10);
    }
}

TEST_CASE("activation fixed points") {
    auto z = Tensor<double>::from_data({1}, {0.0});
    CHECK(gelu(z).item() == doctest::Approx(0.0));
    auto a = Tensor<double>::from_data({2}, {7.5, -1.0});
    auto r = relu6(a);
    CHECK(r.data()[0] == doctest::Approx(6.0));
    CHECK(r.data()[1] == doctest::Approx(0.0));
    auto one = Tensor<double>::from_data({1}, {1.0});
    CHECK(std::abs(gelu(one).item() - 0.841192) < 1e-5);
}

TEST_CASE("layernorm constant row collapses to beta") {
    auto x = Tensor<double>::from_data({1, 3}, {5, 5, 5});
    auto g = Tensor<double>::full({3}, 1.0);
    auto b = Tensor<double>::zeros({3});
    auto y = layernorm(x, g, b, 1e-5);
    for (double v : y.data()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("layernorm two-point standardization") {
    auto x = Tensor<double>::from_data({1, 2}, {1, 3});
    auto g = Tensor<double>::full({2}, 1.0);
    auto b = Tensor<double>::zeros({2});
    auto y = layernorm(x, g, b, 1e-12);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("layernorm output moments") {
    Rng rng(11);
    auto x = random_tensor({4, 8}, rng, -3.0, 3.0);
    auto g = Tensor<double>::full({8}, 1.0);
    auto b = Tensor<double>::zeros({8});
    auto y = layernorm(x, g, b, 1e-9);
    for (int r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 8; ++c) mean += y.data()[r * 8 + c];
        mean /= 8;
        for (int c = 0; c < 8; ++c) {
            const double d = y.data()[r * 8 + c] - mean;
            var += d * d;
        }
        var /= 8;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("softmax symmetry and stability") {
    auto x = Tensor<double>::from_data({3}, {0, 0, 0});
    auto y = softmax_lastdim(x);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    auto big = Tensor<double>::from_data({2}, {1000, 0});
    auto yb = softmax_lastdim(big);
    CHECK(yb.data()[0] == doctest::Approx(1.0));
    CHECK(yb.data()[1] < 1e-300);
    CHECK(yb.all_finite());
}

TEST_CASE("softmax matches direct formula oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor({7}, rng, -4.0, 4.0);
        auto y = softmax_lastdim(x);
        double z = 0.0;
        for (double v : x.data()) z += std::exp(v);
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) {
            CHECK(std::abs(y.data()[i] - std::exp(x.data()[i]) / z) < 1e-10);
            CHECK(y.data()[i] > 0.0);
            sum += y.data()[i];
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("backward of linear sum gives all-ones") {
    Rng rng(3);
    auto w = random_tensor({3, 4}, rng);
    w.set_requires_grad(true);
    sum_all(w).backward();
    for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of quadratic sum gives 2W") {
    Rng rng(4);
    auto w = random_tensor({2, 5}, rng);
    w.set_requires_grad(true);
    sum_all(mul(w, w)).backward();
    for (std::size_t i = 0; i < w.data().size(); ++i)
        CHECK(w.grad()[i] == doctest::Approx(2.0 * w.data()[i]));
}

TEST_CASE("backward rejects non-scalar loss") {
    auto w = Tensor<double>::zeros({2, 2}, true);
    CHECK_THROWS_AS(w.backward(), ContractError);
}

TEST_CASE("composite graph passes finite-difference check") {
    Rng rng(21);
    auto point = random_tensor({3, 3}, rng);
    auto f = [](const Tensor<double>& x) {
        auto y = gelu(matmul(x, transpose2(x)));
        return sum_all(mul(softmax_lastdim(y), y));
    };
    CHECK(grad_check<double>(f, point, 1e-5) < 1e-4);
}

TEST_CASE("per-op gradient checks on random small inputs") {
    Rng rng(33);
    auto pt = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(s, rng, lo, hi); };

    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(gelu(x)); }, pt({8}), 1e-5) < 1e-4);
    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(sigmoid(x)); }, pt({8}), 1e-5) < 1e-4);
    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(exp_op(x)); }, pt({6}), 1e-5) < 1e-4);
    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(log_op(x)); }, pt({6}, 0.5, 2.0), 1e-5) < 1e-4);
    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(pow_scalar(x, -0.5)); },
                             pt({6}, 0.5, 2.0), 1e-5) < 1e-4);
    CHECK(grad_check<double>(
              [](const Tensor<double>& x) { return sum_all(mul(softmax_lastdim(x), x)); }, pt({2, 5}),
              1e-5) < 1e-4);
    {
        Rng r2(34);
        auto w = random_tensor({3, 4}, r2);
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& x) { return sum_all(mul(matmul(x, w), matmul(x, w))); },
                  pt({2, 3}), 1e-5) < 1e-4);
    }
    {
        Rng r2(35);
        auto w = random_tensor({2, 2, 3, 3}, r2);
        auto b = random_tensor({2}, r2);
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& x) {
                      auto y = conv2d(x, w, b, 2, 1, 1);
                      return sum_all(mul(y, y));
                  },
                  pt({2, 5, 5}), 1e-5) < 1e-4);
        // weight gradient
        auto x0 = pt({2, 5, 5});
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& wv) {
                      auto y = conv2d(x0, wv, b, 2, 1, 1);
                      return sum_all(mul(y, y));
                  },
                  w, 1e-5) < 1e-4);
    }
    {
        Rng r2(36);
        auto w = random_tensor({2, 3, 3, 3}, r2);  // [Cin,Cout,kh,kw]
        auto b = random_tensor({3}, r2);
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& x) {
                      auto y = conv_transpose2d(x, w, b, 2, 1, 1);
                      return sum_all(mul(y, y));
                  },
                  pt({2, 3, 3}), 1e-5) < 1e-4);
        auto x0 = pt({2, 3, 3});
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& wv) {
                      auto y = conv_transpose2d(x0, wv, b, 2, 1, 1);
                      return sum_all(mul(y, y));
                  },
                  w, 1e-5) < 1e-4);
    }
    {
        auto g = pt({6}, 0.5, 1.5);
        auto b = pt({6});
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& x) {
                      auto y = layernorm(x, g, b, 1e-5);
                      return sum_all(mul(y, y));
                  },
                  pt({4, 6}), 1e-5) < 1e-4);
        auto x0 = pt({4, 6});
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& gv) {
                      auto y = layernorm(x0, gv, b, 1e-5);
                      return sum_all(mul(y, y));
                  },
                  g, 1e-5) < 1e-4);
    }
    {
        auto a = pt({5}), b = pt({5});
        CHECK(grad_check<double>(
                  [&](const Tensor<double>& x) {
                      auto y = per_channel_affine(reshape(x, {5, 1, 1}), a, b);
                      return sum_all(mul(y, y));
                  },
                  pt({5}), 1e-5) < 1e-4);
    }
    CHECK(grad_check<double>(
              [](const Tensor<double>& x) {
                  auto t = chw_to_tokens(x);
                  auto back = tokens_to_chw(t, 2, 3);
                  return sum_all(mul(back, t.numel() == back.numel() ? back : back));
              },
              pt({4, 2, 3}), 1e-5) < 1e-4);
    CHECK(grad_check<double>(
              [](const Tensor<double>& x) {
                  auto t = patchify(x, 2);
                  return sum_all(mul(t, t));
              },
              pt({3, 4, 4}), 1e-5) < 1e-4);
}

TEST_CASE("cross entropy examples and analytic gradient") {
    auto uniform = Tensor<double>::from_data({2}, {0, 0});
    CHECK(cross_entropy(uniform, 0).item() == doctest::Approx(std::log(2.0)));

    auto big = Tensor<double>::from_data({2}, {1000, 0});
    auto l = cross_entropy(big, 0);
    CHECK(l.item() < 1e-10);
    CHECK(l.all_finite());

    auto logits = Tensor<double>::from_data({3}, {1, 2, 3}, true);
    auto loss = cross_entropy(logits, 2);
    loss.backward();
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) {
        const double expect = std::exp(1.0 + i) / z - (i == 2 ? 1.0 : 0.0);
        CHECK(std::abs(logits.grad()[i] - expect) < 1e-10);
    }
    // finite differences agree too
    CHECK(grad_check<double>([](const Tensor<double>& x) { return cross_entropy(x, 2); },
                             Tensor<double>::from_data({3}, {1, 2, 3}), 1e-5) < 1e-7);
}

TEST_CASE("grad_check on exact quadratic is near machine precision") {
    Rng rng(55);
    auto point = random_tensor({10}, rng);
    CHECK(grad_check<double>([](const Tensor<double>& x) { return sum_all(mul(x, x)); }, point,
                             1e-5) < 1e-8);
}

TEST_CASE("adam first step closed form") {
    ParamStore<double> store;
    auto w = store.add("w", Tensor<double>::zeros({1}));
    w.grad()[0] = 1.0;
    store.adam_step(1e-4, 0.9, 0.999, 1e-8, 1);
    CHECK(w.data()[0] == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("frozen parameter is bit-identical after steps with nonzero grad") {
    ParamStore<double> store;
    auto w = store.add("frozen.w", Tensor<double>::from_data({2}, {1.5, -2.5}), true);
    auto v = store.add("train.v", Tensor<double>::zeros({1}));
    w.set_requires_grad(true);  // allow a gradient to exist; the update must still skip it
    w.grad().assign(2, 3.0);
    const std::vector<double> before = w.data();
    for (int t = 1; t <= 5; ++t) {
        v.grad()[0] = 1.0;
        w.grad().assign(2, 3.0);
        store.adam_step(1e-2, 0.9, 0.999, 1e-8, t);
    }
    CHECK(w.data() == before);
}

TEST_CASE("adam trajectory on w^2 matches scalar reference recurrence") {
    ParamStore<double> store;
    auto w = store.add("w", Tensor<double>::from_data({1}, {1.0}));

    double rw = 1.0, rm = 0.0, rv = 0.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double prev = 1.0;
    for (int t = 1; t <= 10; ++t) {
        auto loss = sum_all(mul(w, w));
        loss.backward();
        store.adam_step(lr, b1, b2, eps, t);

        const double g = 2.0 * rw;
        rm = b1 * rm + (1 - b1) * g;
        rv = b2 * rv + (1 - b2) * g * g;
        rw -= lr * (rm / (1 - std::pow(b1, t))) / (std::sqrt(rv / (1 - std::pow(b2, t))) + eps);

        CHECK(std::abs(w.data()[0] - rw) < 1e-12);
        CHECK(w.data()[0] < prev);  // strictly decreasing toward 0
        prev = w.data()[0];
    }
}

TEST_CASE("adam reports missing gradient by name") {
    ParamStore<double> store;
    auto w = store.add("encoder.conv1.weight", Tensor<double>::zeros({2}));
    w.set_requires_grad(false);
    w.grad().clear();
    CHECK_THROWS_WITH_AS(store.adam_step(1e-3, 0.9, 0.999, 1e-8, 1),
                         doctest::Contains("encoder.conv1.weight"), ContractError);
}

TEST_CASE("rng streams are seed-deterministic") {
    Rng a(1234), b(1234), c(1235);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        if (x != c.next_u64()) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("nonfinite diagnostics name the offending op") {
    auto x = Tensor<double>::from_data({2}, {1.0, -1.0}, true);
    auto y = log_op(x);  // log(-1) = nan
    CHECK_THROWS_WITH_AS(assert_all_finite(sum_all(y), "loss"), doctest::Contains("log"),
                         NumericError);
}
