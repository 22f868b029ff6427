#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ci2p/codec.hpp"
#include "ci2p/grad_check.hpp"

using namespace ci2p;

namespace {

template <class S>
Tensor<S> random_image(int h, int w, Rng& rng) {
    std::vector<S> d(static_cast<std::size_t>(3) * h * w);
    for (auto& v : d) v = static_cast<S>(rng.uniform());
    return Tensor<S>::from_data({3, h, w}, std::move(d));
}

}  // namespace

TEST_CASE("encode shapes at default widths") {
    ParamStore<float> store;
    Rng rng(1);
    auto codec = make_codec<float>(store, 128, 192, rng);

    Rng img_rng(2);
    auto y256 = encode(codec, random_image<float>(256, 256, img_rng));
    CHECK(y256.shape() == Shape{192, 16, 16});

    auto y64 = encode(codec, random_image<float>(64, 64, img_rng));
    CHECK(y64.shape() == Shape{192, 4, 4});

    auto y32 = encode(codec, Tensor<float>::zeros({3, 32, 32}));
    CHECK(y32.shape() == Shape{192, 2, 2});
    CHECK(y32.all_finite());
}

TEST_CASE("encode rejects non-multiple-of-16 input") {
    ParamStore<float> store;
    Rng rng(1);
    auto codec = make_codec<float>(store, 16, 16, rng);
    CHECK_THROWS_WITH_AS(encode(codec, Tensor<float>::zeros({3, 40, 40})),
                         doctest::Contains("pad"), DimensionError);
}

TEST_CASE("decode inverts encode shapes") {
    ParamStore<float> store;
    Rng rng(3);
    auto codec = make_codec<float>(store, 128, 192, rng);

    auto x256 = decode(codec, Tensor<float>::zeros({192, 16, 16}));
    CHECK(x256.shape() == Shape{3, 256, 256});
    auto x32 = decode(codec, Tensor<float>::zeros({192, 2, 2}));
    CHECK(x32.shape() == Shape{3, 32, 32});
    // eval-mode output is clamped
    for (float v : x256.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("shape round trip at toy width") {
    ParamStore<float> store;
    Rng rng(4);
    auto codec = make_codec<float>(store, 8, 12, rng);
    Rng img_rng(5);
    for (int hw : {16, 32, 48}) {
        auto x = random_image<float>(hw, hw, img_rng);
        auto xhat = decode(codec, encode(codec, x));
        CHECK(xhat.shape() == x.shape());
    }
}

TEST_CASE("quantize eval rounds half away from zero and is idempotent") {
    auto y = Tensor<double>::from_data({3}, {0.4, -1.6, 2.5});
    Rng rng(0);
    auto q = quantize(y, QuantMode::eval, rng);
    CHECK(q.data()[0] == 0.0);
    CHECK(q.data()[1] == -2.0);
    CHECK(q.data()[2] == 3.0);
    auto qq = quantize(q, QuantMode::eval, rng);
    CHECK(qq.data() == q.data());
}

TEST_CASE("quantize train noise is bounded and centered") {
    Rng rng(7);
    const int n = 100000;
    auto y = Tensor<double>::zeros({n});
    auto q = quantize(y, QuantMode::train, rng);
    double mean = 0.0;
    for (double v : q.data()) {
        CHECK(std::abs(v) <= 0.5);
        mean += v;
    }
    mean /= n;
    // sigma of the mean of n U(-0.5,0.5) draws
    const double sigma = (1.0 / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean) < 3.0 * sigma);
}

TEST_CASE("quantize train noise is seed-reproducible") {
    auto y = Tensor<double>::zeros({64});
    Rng a(7), b(7);
    CHECK(quantize(y, QuantMode::train, a).data() == quantize(y, QuantMode::train, b).data());
}

TEST_CASE("rate_bpp closed-form logistic at the channel mean") {
    auto yhat = Tensor<double>::zeros({1, 1, 1});
    auto mean = Tensor<double>::zeros({1});
    auto ls = Tensor<double>::zeros({1});  // scale 1
    const double bits = rate_bpp(yhat, mean, ls, 1).item();
    const double p = 2.0 / (1.0 + std::exp(-0.5)) - 1.0;
    CHECK(bits == doctest::Approx(-std::log2(p)).epsilon(1e-9));
    CHECK(bits == doctest::Approx(2.030).epsilon(1e-3));
}

TEST_CASE("rate_bpp probability floor arithmetic") {
    const int m = 4, h = 3, w = 3;
    auto yhat = Tensor<double>::full({m, h, w}, 1e6);  // far in the tail, p floors at 1e-9
    auto mean = Tensor<double>::zeros({m});
    auto ls = Tensor<double>::full({m}, std::log(1e-3));
    const std::int64_t num_pixels = 64 * 64;
    const double r = rate_bpp(yhat, mean, ls, num_pixels).item();
    const double expect = static_cast<double>(m * h * w) * std::log2(1e9) / num_pixels;
    CHECK(r == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r >= 0.0);
}

TEST_CASE("rate at channel means is non-increasing as scale shrinks") {
    const int m = 3;
    auto yhat = Tensor<double>::zeros({m, 2, 2});
    auto mean = Tensor<double>::zeros({m});
    double prev = 1e100;
    for (double ls : {1.0, 0.5, 0.0, -1.0, -2.0}) {
        const double r = rate_bpp(yhat, mean, Tensor<double>::full({m}, ls), 16).item();
        CHECK(r <= prev + 1e-12);
        CHECK(r >= 0.0);
        prev = r;
    }
}

TEST_CASE("rd_loss degenerate lambda and decomposition") {
    ParamStore<double> store;
    Rng rng(9);
    auto codec = make_codec<double>(store, 8, 12, rng);
    Rng img_rng(10);
    auto x = random_image<double>(32, 32, img_rng);

    Rng q1(3);
    auto parts0 = rd_loss(codec, x, 0.0, QuantMode::train, q1);
    CHECK(parts0.total.item() == parts0.r_bpp.item());

    Rng q2(3);
    auto parts = rd_loss(codec, x, 7.5, QuantMode::train, q2);
    CHECK(std::abs(parts.total.item() - (7.5 * parts.d_mse.item() + parts.r_bpp.item())) < 1e-12);
    CHECK(parts.r_bpp.item() >= 0.0);
    CHECK(parts.d_mse.item() >= 0.0);

    // zero-distortion case: identical reconstruction leaves only the rate term
    CHECK(mse(x, x).item() == 0.0);
}

TEST_CASE("rd_loss gradient passes finite differences at tiny width") {
    ParamStore<double> store;
    Rng rng(12);
    auto codec = make_codec<double>(store, 8, 12, rng);
    Rng img_rng(13);
    auto x = random_image<double>(32, 32, img_rng);

    auto loss_fn = [&]() {
        Rng noise(41);  // fixed noise across evaluations
        return rd_loss(codec, x, 5.0, QuantMode::train, noise).total;
    };
    std::vector<std::int64_t> coords{0, 17, 101, 255, 311};
    CHECK(grad_check_param<double>(loss_fn, codec.enc[0].w, 1e-5, coords) < 1e-4);
    CHECK(grad_check_param<double>(loss_fn, codec.dec[3].w, 1e-5, coords) < 1e-4);
    CHECK(grad_check_param<double>(loss_fn, codec.ent_mean, 1e-5, {0, 5, 11}) < 1e-4);
    CHECK(grad_check_param<double>(loss_fn, codec.ent_log_scale, 1e-5, {0, 5, 11}) < 1e-4);
    CHECK(grad_check_param<double>(loss_fn, codec.enc_gdn[0].gamma, 1e-5, {0, 9, 33}) < 1e-4);
}

TEST_CASE("train_codec noop and determinism contracts") {
    Rng img_rng(20);
    std::vector<Tensor<float>> images{random_image<float>(32, 32, img_rng),
                                      random_image<float>(32, 32, img_rng)};

    auto run = [&](int steps) {
        ParamStore<float> store;
        Rng rng(21);
        auto codec = make_codec<float>(store, 8, 12, rng);
        auto before = store.snapshot();
        auto hist = train_codec(codec, store, images, steps, 0.01 * 255 * 255, 1e-3, 5);
        return std::make_pair(store.snapshot(), before);
    };

    auto [after0, before0] = run(0);
    CHECK(after0 == before0);  // steps=0 leaves the model bitwise unchanged

    auto [a, _1] = run(10);
    auto [b, _2] = run(10);
    CHECK(a == b);  // same seed, bitwise-identical trajectory
}

TEST_CASE("short toy training improves held-out reconstruction") {
    Rng img_rng(30);
    std::vector<Tensor<float>> train_imgs;
    for (int i = 0; i < 4; ++i) train_imgs.push_back(random_image<float>(32, 32, img_rng));
    auto held_out = random_image<float>(32, 32, img_rng);

    ParamStore<float> store;
    Rng rng(31);
    auto codec = make_codec<float>(store, 8, 12, rng);

    auto recon_mse = [&]() {
        Rng q(0);
        auto xhat = decode(codec, quantize(encode(codec, held_out), QuantMode::eval, q));
        return static_cast<double>(mse(held_out, xhat).item());
    };
    const double before = recon_mse();
    auto hist = train_codec(codec, store, train_imgs, 200, 0.01 * 255 * 255, 1e-3, 77);
    CHECK(hist.size() == 200);
    CHECK(recon_mse() < before);
}

TEST_CASE("psnr closed forms and recompute oracle") {
    auto x = Tensor<double>::zeros({3, 4, 4});
    CHECK(std::isinf(psnr(x, x)));

    auto xhat = Tensor<double>::full({3, 4, 4}, 0.1);  // MSE = 0.01
    CHECK(psnr(x, xhat) == doctest::Approx(20.0).epsilon(1e-9));

    Rng rng(44);
    std::vector<double> a(48), b(48);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform();
    auto ta = Tensor<double>::from_data({3, 4, 4}, a);
    auto tb = Tensor<double>::from_data({3, 4, 4}, b);
    double acc = 0.0;
    for (int i = 0; i < 48; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    const double expect = 10.0 * std::log10(48.0 / acc);
    CHECK(std::abs(psnr(ta, tb) - expect) < 1e-9);
}
