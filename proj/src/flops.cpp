#include "ci2p/flops.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

#include "ci2p/errors.hpp"

namespace ci2p {

std::int64_t FlopsReport::total_flops() const {
    std::int64_t t = 0;
    for (const auto& r : rows) t += r.flops;
    return t;
}

std::int64_t FlopsReport::total_params() const {
    std::int64_t t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
}

std::int64_t msa_flops(std::int64_t hw, std::int64_t c) {
    if (hw < 1 || c < 1) throw ConfigError("msa_flops: hw and C must be >= 1");
    return 4 * hw * c * c + 2 * hw * hw * c;
}

std::int64_t matmul_flops(std::int64_t m, std::int64_t k, std::int64_t n) { return m * k * n; }

std::int64_t conv_flops(int kh, int kw, int cin_per_group, int cout, int hout, int wout) {
    return static_cast<std::int64_t>(kh) * kw * cin_per_group * cout * hout * wout;
}

std::int64_t mlp_flops(std::int64_t hw, std::int64_t c, std::int64_t hidden) {
    return 2 * hw * c * hidden;
}

namespace {

std::int64_t block_params(std::int64_t d, std::int64_t h) {
    const std::int64_t ln = 2 * (2 * d);
    const std::int64_t attn = (d * 3 * d + 3 * d) + (d * d + d);
    const std::int64_t mlp = (d * h + h) + (h * d + d);
    return ln + attn + mlp;
}

std::int64_t block_flops(std::int64_t hw, std::int64_t d, std::int64_t h) {
    return msa_flops(hw, d) + mlp_flops(hw, d, h);
}

// Stride-2, 4x-channel inverted residual (expansion 4) on a g x g input grid.
FlopsRow reshape_row(const std::string& name, int c, int g) {
    const int hidden = 4 * c;
    const int out = 4 * c;
    const int go = g / 2;
    FlopsRow r;
    r.component = name;
    r.flops = conv_flops(1, 1, c, hidden, g, g) + conv_flops(3, 3, 1, hidden, go, go) +
              conv_flops(1, 1, hidden, out, go, go);
    r.params = (static_cast<std::int64_t>(hidden) * c + hidden) + (hidden * 9 + hidden) +
               (static_cast<std::int64_t>(out) * hidden + out);
    return r;
}

// Four 5x5 stride-2 convs 3 -> N -> N -> N -> M with GDN after the first
// three. GDN multiplies are excluded from FLOPs; its beta/gamma are counted as
// parameters.
FlopsRow encoder_row(int n, int m, int size) {
    FlopsRow r;
    r.component = "codec_encoder";
    r.flops = conv_flops(5, 5, 3, n, size / 2, size / 2) +
              conv_flops(5, 5, n, n, size / 4, size / 4) +
              conv_flops(5, 5, n, n, size / 8, size / 8) +
              conv_flops(5, 5, n, m, size / 16, size / 16);
    const std::int64_t nn = n;
    r.params = (75 * nn + nn) + 2 * (25 * nn * nn + nn) + (25 * nn * static_cast<std::int64_t>(m) + m) +
               3 * (nn + nn * nn);
    return r;
}

}  // namespace

FlopsReport model_flops(const ModelDesc& desc_in, int image_size) {
    ModelDesc desc = desc_in;
    desc.image_size = image_size;
    desc.validate();

    FlopsReport rep;
    rep.variant = variant_name(desc.variant);
    rep.image_size = image_size;

    const std::int64_t d = desc.dim;
    const std::int64_t tokens = desc.token_count();

    switch (desc.variant) {
        case Variant::vit_b16: {
            const std::int64_t pd = 3LL * desc.patch * desc.patch;
            rep.rows.push_back({"patch_embed", matmul_flops(tokens, pd, d), pd * d + d});
            rep.rows.push_back({"pos_embed", 0, desc.use_pos_embed ? tokens * d : 0});
            rep.rows.push_back(
                {"transformer", desc.depth * block_flops(tokens, d, desc.mlp_hidden),
                 desc.depth * block_params(d, desc.mlp_hidden)});
            break;
        }
        case Variant::ci2p_vit: {
            rep.rows.push_back(encoder_row(desc.codec_n, desc.codec_m, image_size));
            rep.rows.push_back(reshape_row("patch_reshape", desc.codec_m, image_size / 16));
            rep.rows.push_back({"pos_embed", 0, desc.use_pos_embed ? tokens * d : 0});
            rep.rows.push_back(
                {"transformer", desc.depth * block_flops(tokens, d, desc.mlp_hidden),
                 desc.depth * block_params(d, desc.mlp_hidden)});
            break;
        }
        case Variant::ci2p_vit_ds: {
            const std::int64_t ed = desc.ds_early_dim;
            const std::int64_t eh = desc.early_mlp_hidden();
            const std::int64_t late_tokens =
                static_cast<std::int64_t>(image_size / 32) * (image_size / 32);
            rep.rows.push_back(encoder_row(desc.codec_n, desc.codec_m, image_size));
            rep.rows.push_back({"pos_embed", 0,
                                desc.use_pos_embed ? tokens * ed + late_tokens * d : 0});
            rep.rows.push_back({"transformer_early",
                                desc.ds_split * block_flops(tokens, ed, eh),
                                desc.ds_split * block_params(ed, eh)});
            rep.rows.push_back(reshape_row("cnn_reshape", desc.ds_early_dim, image_size / 16));
            rep.rows.push_back({"transformer_late",
                                (desc.depth - desc.ds_split) * block_flops(late_tokens, d, desc.mlp_hidden),
                                (desc.depth - desc.ds_split) * block_params(d, desc.mlp_hidden)});
            break;
        }
    }
    // final norm + linear head (GAP itself is free under the convention)
    rep.rows.push_back({"head", matmul_flops(1, d, desc.num_classes),
                        2 * d + d * desc.num_classes + desc.num_classes});
    return rep;
}

std::int64_t model_params(const ModelDesc& desc) {
    return model_flops(desc, desc.image_size).total_params();
}

double reduction_vs(const FlopsReport& report, const FlopsReport& baseline) {
    return 1.0 - static_cast<double>(report.total_flops()) /
                     static_cast<double>(baseline.total_flops());
}

std::string reduction_table(const std::vector<int>& sizes, const std::string& format) {
    if (format != "csv" && format != "table") {
        throw ConfigError("reduction_table: format must be csv or table, got '" + format + "'");
    }
    for (int s : sizes) {
        if (s <= 0 || s % 32 != 0) {
            throw ConfigError("reduction_table: sizes must be positive multiples of 32, got " +
                              std::to_string(s));
        }
    }

    ModelDesc base;
    ModelDesc ci2p = base;
    ci2p.variant = Variant::ci2p_vit;
    ModelDesc ds = base;
    ds.variant = Variant::ci2p_vit_ds;

    std::ostringstream os;
    if (format == "csv") {
        os << "variant,image_size,component,flops,params\n";
        for (int s : sizes) {
            for (const ModelDesc* d : {&base, &ci2p, &ds}) {
                auto rep = model_flops(*d, s);
                for (const auto& r : rep.rows) {
                    os << rep.variant << ',' << s << ',' << r.component << ',' << r.flops << ','
                       << r.params << '\n';
                }
                os << rep.variant << ',' << s << ",total," << rep.total_flops() << ','
                   << rep.total_params() << '\n';
            }
        }
        return os.str();
    }

    os << std::left << std::setw(8) << "size" << std::setw(14) << "variant" << std::right
       << std::setw(16) << "GFLOPs" << std::setw(14) << "params(M)" << std::setw(12)
       << "reduction" << '\n';
    for (int s : sizes) {
        auto brep = model_flops(base, s);
        for (const ModelDesc* d : {&base, &ci2p, &ds}) {
            auto rep = model_flops(*d, s);
            os << std::left << std::setw(8) << s << std::setw(14) << rep.variant << std::right
               << std::fixed << std::setprecision(3) << std::setw(16)
               << static_cast<double>(rep.total_flops()) / 1e9 << std::setw(14)
               << static_cast<double>(rep.total_params()) / 1e6 << std::setprecision(2)
               << std::setw(11) << 100.0 * reduction_vs(rep, brep) << '%' << '\n';
        }
    }
    return os.str();
}

}  // namespace ci2p
