#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "ci2p/flops.hpp"
#include "ci2p/vit.hpp"

using namespace ci2p;

namespace {

ModelDesc default_desc(Variant v) {
    ModelDesc d;
    d.variant = v;
    return d;
}

double rel_err(double got, double want) { return std::abs(got - want) / want; }

}  // namespace

TEST_CASE("msa_flops closed form") {
    CHECK(msa_flops(1, 1) == 6);
    CHECK(msa_flops(256, 768) == 704643072);
    CHECK(msa_flops(64, 768) == 157286400);
    CHECK_THROWS_AS(msa_flops(0, 4), ConfigError);
}

TEST_CASE("totals reproduce the published complexity table") {
    struct Row {
        Variant v;
        int size;
        double gflops;
        double tol;
    };
    const Row rows[] = {
        {Variant::vit_b16, 256, 23.127, 0.01},   {Variant::vit_b16, 384, 55.433, 0.01},
        {Variant::vit_b16, 512, 107.0, 0.01},    {Variant::ci2p_vit, 256, 8.477, 0.10},
        {Variant::ci2p_vit, 384, 19.284, 0.10},  {Variant::ci2p_vit, 512, 34.81, 0.10},
        {Variant::ci2p_vit_ds, 256, 6.442, 0.10}, {Variant::ci2p_vit_ds, 384, 14.492, 0.10},
        {Variant::ci2p_vit_ds, 512, 25.762, 0.10},
    };
    for (const auto& r : rows) {
        auto rep = model_flops(default_desc(r.v), r.size);
        CHECK(rel_err(static_cast<double>(rep.total_flops()) / 1e9, r.gflops) < r.tol);
    }
}

TEST_CASE("percentage reductions against the baseline") {
    struct Row {
        Variant v;
        int size;
        double pct;
    };
    const Row rows[] = {
        {Variant::ci2p_vit, 256, 63.35},    {Variant::ci2p_vit, 384, 65.21},
        {Variant::ci2p_vit, 512, 67.47},    {Variant::ci2p_vit_ds, 256, 72.15},
        {Variant::ci2p_vit_ds, 384, 73.86}, {Variant::ci2p_vit_ds, 512, 75.92},
    };
    for (const auto& r : rows) {
        auto base = model_flops(default_desc(Variant::vit_b16), r.size);
        auto rep = model_flops(default_desc(r.v), r.size);
        CHECK(std::abs(100.0 * reduction_vs(rep, base) - r.pct) < 3.0);
    }
    // against itself: exactly zero
    auto self = model_flops(default_desc(Variant::ci2p_vit), 256);
    CHECK(reduction_vs(self, self) == 0.0);
}

TEST_CASE("reductions grow with image size") {
    for (Variant v : {Variant::ci2p_vit, Variant::ci2p_vit_ds}) {
        double prev = -1.0;
        for (int s : {256, 384, 512}) {
            auto base = model_flops(default_desc(Variant::vit_b16), s);
            double red = reduction_vs(model_flops(default_desc(v), s), base);
            CHECK(red > prev);
            prev = red;
        }
    }
}

TEST_CASE("flops strictly increase with image size for every variant") {
    for (Variant v : {Variant::vit_b16, Variant::ci2p_vit, Variant::ci2p_vit_ds}) {
        std::int64_t prev = 0;
        for (int s : {64, 96, 128, 256, 384, 512}) {
            auto t = model_flops(default_desc(v), s).total_flops();
            CHECK(t > prev);
            prev = t;
        }
    }
}

TEST_CASE("attention cost ratio is the closed-form token ratio") {
    // attention-only portions at 256^2
    const std::int64_t ci2p_attn = 12 * msa_flops(64, 768);
    const std::int64_t base_attn = 12 * msa_flops(256, 768);
    const double expect = static_cast<double>(4 * 64 * 768 + 2 * 64 * 64) /
                          static_cast<double>(4 * 256 * 768 + 2 * 256 * 256);
    CHECK(static_cast<double>(ci2p_attn) / static_cast<double>(base_attn) ==
          doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("parameter totals land on the published counts") {
    CHECK(rel_err(static_cast<double>(model_params(default_desc(Variant::vit_b16))), 86e6) < 0.02);
    CHECK(rel_err(static_cast<double>(model_params(default_desc(Variant::ci2p_vit))), 88.96e6) <
          0.05);
    CHECK(rel_err(static_cast<double>(model_params(default_desc(Variant::ci2p_vit_ds))), 49.7e6) <
          0.05);
}

TEST_CASE("analyzer param counts equal built-model element counts exactly") {
    SUBCASE("vit_b16 tiny") {
        ModelDesc d;
        d.image_size = 64;
        d.depth = 2;
        d.dim = 16;
        d.heads = 2;
        d.mlp_hidden = 32;
        d.num_classes = 2;
        ParamStore<float> store;
        Rng rng(50);
        build_model<float>(d, nullptr, store, rng);
        CHECK(model_params(d) == store.element_count());
    }
    SUBCASE("ci2p_vit tiny") {
        ModelDesc d;
        d.variant = Variant::ci2p_vit;
        d.image_size = 64;
        d.depth = 2;
        d.dim = 64;
        d.heads = 4;
        d.mlp_hidden = 128;
        d.num_classes = 2;
        d.codec_n = 8;
        d.codec_m = 16;
        ParamStore<float> cstore, store;
        Rng rng(51);
        auto codec = make_codec<float>(cstore, 8, 16, rng);
        build_model<float>(d, &codec, store, rng);
        CHECK(model_params(d) == store.element_count());
    }
    SUBCASE("ci2p_vit_ds tiny") {
        ModelDesc d;
        d.variant = Variant::ci2p_vit_ds;
        d.image_size = 64;
        d.depth = 2;
        d.dim = 64;
        d.heads = 4;
        d.mlp_hidden = 128;
        d.ds_early_dim = 16;
        d.ds_split = 1;
        d.num_classes = 2;
        d.codec_n = 8;
        d.codec_m = 16;
        ParamStore<float> cstore, store;
        Rng rng(52);
        auto codec = make_codec<float>(cstore, 8, 16, rng);
        build_model<float>(d, &codec, store, rng);
        CHECK(model_params(d) == store.element_count());
    }
    SUBCASE("full-size configs") {
        // full-size param totals are cheap to build in float
        for (Variant v : {Variant::ci2p_vit_ds, Variant::ci2p_vit}) {
            ModelDesc d = default_desc(v);
            ParamStore<float> cstore, store;
            Rng rng(53);
            auto codec = make_codec<float>(cstore, d.codec_n, d.codec_m, rng);
            build_model<float>(d, &codec, store, rng);
            CHECK(model_params(d) == store.element_count());
        }
        ModelDesc d = default_desc(Variant::vit_b16);
        ParamStore<float> store;
        Rng rng(54);
        build_model<float>(d, nullptr, store, rng);
        CHECK(model_params(d) == store.element_count());
    }
}

TEST_CASE("report totals equal the sum of rows") {
    auto rep = model_flops(default_desc(Variant::ci2p_vit_ds), 256);
    std::int64_t f = 0, p = 0;
    for (const auto& r : rep.rows) {
        f += r.flops;
        p += r.params;
    }
    CHECK(rep.total_flops() == f);
    CHECK(rep.total_params() == p);
}

TEST_CASE("reduction_table formats") {
    auto csv = reduction_table({256, 384}, "csv");
    std::istringstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "variant,image_size,component,flops,params");
    int totals = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find(",total,") != std::string::npos) ++totals;
    }
    CHECK(totals == 6);  // 3 variants x 2 sizes

    auto table = reduction_table({256}, "table");
    CHECK(table.find("vit_b16") != std::string::npos);
    CHECK(table.find('%') != std::string::npos);

    CHECK_THROWS_AS(reduction_table({256}, "json"), ConfigError);
    CHECK_THROWS_AS(reduction_table({100}, "csv"), ConfigError);
}
