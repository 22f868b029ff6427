#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ci2p/checkpoint.hpp"
#include "ci2p/dataset.hpp"
#include "ci2p/flops.hpp"
#include "ci2p/grad_check.hpp"
#include "ci2p/train.hpp"

using namespace ci2p;
namespace fs = std::filesystem;

namespace {

// Flat key=value files; '#' starts a comment line.
std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open config file");
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

// Config-file values fill in options the command line left untouched.
void apply_config(CLI::App* cmd, const std::string& path) {
    auto kv = read_config(path);
    for (auto& [key, value] : kv) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt) throw ConfigError(path + ": unknown option '" + key + "'");
        if (opt->count() > 0) continue;  // flags win
        opt->add_result(value);
        opt->run_callback();
    }
}

// Priority: flag, then config file, then CI2P_SEED, then default.
void resolve_seed(CLI::Option* seed_opt, std::uint64_t& seed) {
    if (seed_opt->count() > 0) return;
    if (const char* env = std::getenv("CI2P_SEED")) {
        try {
            seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("CI2P_SEED is not an integer: ") + env);
        }
    }
}

struct ModelOpts {
    std::string variant = "ci2p_vit";
    int image_size = 64;
    int depth = 2;
    int dim = 64;
    int heads = 4;
    int mlp_hidden = 128;
    int ds_early_dim = 16;
    int ds_split = 1;
    int num_classes = 0;  // 0: infer from dataset
    int codec_n = 8;
    int codec_m = 16;
    bool no_pos_embed = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--variant", variant, "vit_b16 | ci2p_vit | ci2p_vit_ds");
        cmd->add_option("--image-size", image_size);
        cmd->add_option("--depth", depth);
        cmd->add_option("--dim", dim);
        cmd->add_option("--heads", heads);
        cmd->add_option("--mlp-hidden", mlp_hidden);
        cmd->add_option("--ds-early-dim", ds_early_dim);
        cmd->add_option("--ds-split", ds_split);
        cmd->add_option("--classes", num_classes);
        cmd->add_option("--codec-n", codec_n);
        cmd->add_option("--codec-m", codec_m);
        cmd->add_flag("--no-pos-embed", no_pos_embed, "disable learned positional embeddings");
    }

    ModelDesc to_desc() const {
        ModelDesc d;
        d.variant = parse_variant(variant);
        d.image_size = image_size;
        d.depth = depth;
        d.dim = dim;
        d.heads = heads;
        d.mlp_hidden = mlp_hidden;
        d.ds_early_dim = ds_early_dim;
        d.ds_split = ds_split;
        d.num_classes = num_classes;
        d.codec_n = codec_n;
        d.codec_m = codec_m;
        d.use_pos_embed = !no_pos_embed;
        d.validate();
        return d;
    }
};

ModelDesc read_desc_sidecar(const std::string& path) {
    if (!fs::exists(path)) throw DataError(path + ": model description file not found");
    std::map<std::string, std::string> kv = read_config(path);
    return ModelDesc::deserialize(kv);
}

int run_gen_data(const std::string& out, int classes, int per_class, int size,
                 std::uint64_t seed) {
    fs::create_directories(out);
    auto ds = gen_synthetic<float>(classes, per_class, size, seed);
    save_dataset(out, ds);
    std::cout << "wrote " << ds.items.size() << " images (" << ds.train_idx.size() << " train, "
              << ds.val_idx.size() << " val) to " << out << "\n";
    return 0;
}

int run_train_codec(const std::string& data, const std::string& out, const std::string& metrics,
                    int n, int m, int steps, double lambda, double lr, std::uint64_t seed) {
    auto ds = load_dataset<float>(data);
    std::vector<Tensor<float>> images;
    for (int i : ds.train_idx) images.push_back(ds.items[static_cast<std::size_t>(i)].image);

    ParamStore<float> store;
    Rng rng(seed);
    auto codec = make_codec<float>(store, n, m, rng);
    auto history = train_codec(codec, store, images, steps, lambda, lr, seed);

    if (!metrics.empty()) {
        std::ofstream csv(metrics);
        if (!csv) throw DataError(metrics + ": cannot open for writing");
        csv << "step,d_mse,r_bpp,total\n";
        for (std::size_t i = 0; i < history.size(); ++i) {
            csv << (i + 1) << ',' << history[i].d_mse << ',' << history[i].r_bpp << ','
                << history[i].total << '\n';
        }
    }
    save_checkpoint(out, store);
    if (!history.empty()) {
        std::cout << "final: d_mse=" << history.back().d_mse << " r_bpp=" << history.back().r_bpp
                  << " total=" << history.back().total << "\n";
    }
    std::cout << "wrote codec checkpoint " << out << "\n";
    return 0;
}

int run_train(const ModelOpts& mo, const std::string& data, const std::string& codec_path,
              const std::string& out, const std::string& metrics, TrainConfig cfg) {
    auto ds = load_dataset<float>(data);
    ModelOpts opts = mo;
    if (opts.num_classes == 0) opts.num_classes = ds.class_count;
    ModelDesc desc = opts.to_desc();

    ParamStore<float> cstore, store;
    Rng rng(cfg.seed);
    CodecModel<float> codec;
    const bool needs_codec = desc.variant != Variant::vit_b16;
    if (needs_codec) {
        Rng crng = rng.fork(1);
        codec = make_codec<float>(cstore, desc.codec_n, desc.codec_m, crng);
        if (!codec_path.empty()) {
            load_checkpoint_into(codec_path, cstore);
        } else {
            std::cout << "note: no --codec given, using a random frozen encoder (ablation)\n";
        }
    }
    auto model = build_model<float>(desc, needs_codec ? &codec : nullptr, store, rng);

    auto history = train_classifier(model, store, ds, cfg, metrics, out);
    {
        std::ofstream os(out + ".desc");
        if (!os) throw DataError(out + ".desc: cannot open for writing");
        os << desc.serialize();
    }
    if (!history.empty()) {
        const auto& last = history.back();
        std::cout << "epoch " << last.epoch << ": train_loss=" << last.train_loss
                  << " train_acc=" << last.train_acc << " val_acc=" << last.val_acc << "\n";
    }
    std::cout << "frozen-encoder audit: ok\n";
    std::cout << "wrote classifier checkpoint " << out << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& desc_path, const std::string& data,
             const std::string& split) {
    const std::string dpath = desc_path.empty() ? ckpt + ".desc" : desc_path;
    ModelDesc desc = read_desc_sidecar(dpath);
    auto ds = load_dataset<float>(data);

    ParamStore<float> cstore, store;
    Rng rng(0);
    CodecModel<float> codec;
    const bool needs_codec = desc.variant != Variant::vit_b16;
    if (needs_codec) codec = make_codec<float>(cstore, desc.codec_n, desc.codec_m, rng);
    auto model = build_model<float>(desc, needs_codec ? &codec : nullptr, store, rng);
    load_checkpoint_into(ckpt, store);

    const std::vector<int>& idx = split == "train" ? ds.train_idx : ds.val_idx;
    std::cout << split << " top-1: " << evaluate(model, ds, idx) << "\n";
    return 0;
}

int run_analyze(const std::string& variant, const std::string& sizes_csv,
                const std::string& format) {
    std::vector<int> sizes;
    std::stringstream ss(sizes_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            sizes.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("analyze: bad size '" + tok + "'");
        }
    }
    if (sizes.empty()) throw ConfigError("analyze: no sizes given");

    if (variant == "all") {
        std::cout << reduction_table(sizes, format);
        return 0;
    }
    ModelDesc d;
    d.variant = parse_variant(variant);
    if (format == "csv") std::cout << "variant,image_size,component,flops,params\n";
    for (int s : sizes) {
        auto rep = model_flops(d, s);
        if (format == "csv") {
            for (const auto& r : rep.rows) {
                std::cout << rep.variant << ',' << s << ',' << r.component << ',' << r.flops << ','
                          << r.params << '\n';
            }
            std::cout << rep.variant << ',' << s << ",total," << rep.total_flops() << ','
                      << rep.total_params() << '\n';
        } else {
            std::cout << rep.variant << " @" << s << ": "
                      << static_cast<double>(rep.total_flops()) / 1e9 << " GFLOPs, "
                      << static_cast<double>(rep.total_params()) / 1e6 << " M params\n";
        }
    }
    return 0;
}

int run_reconstruct(const std::string& codec_path, int n, int m, const std::string& data,
                    const std::string& out, int count) {
    auto ds = load_dataset<float>(data);
    ParamStore<float> store;
    Rng rng(0);
    auto codec = make_codec<float>(store, n, m, rng);
    load_checkpoint_into(codec_path, store);

    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "metrics.csv");
    if (!csv) throw DataError(out + "/metrics.csv: cannot open for writing");
    csv << "index,psnr_db,bpp\n";

    Rng qrng(0);  // unused in eval quantization
    const int total = std::min<int>(count, static_cast<int>(ds.val_idx.size()));
    for (int i = 0; i < total; ++i) {
        const auto& item = ds.items[static_cast<std::size_t>(ds.val_idx[static_cast<std::size_t>(i)])];
        auto y = encode(codec, item.image);
        auto yhat = quantize(y, QuantMode::eval, qrng);
        auto xhat = decode(codec, yhat, QuantMode::eval);
        const double p = psnr(item.image, xhat);
        auto r = rate_bpp(yhat, codec.ent_mean, codec.ent_log_scale,
                          static_cast<std::int64_t>(item.image.dim(1)) * item.image.dim(2));
        csv << i << ',' << p << ',' << static_cast<double>(r.item()) << '\n';

        // original | reconstruction, side by side
        const int h = item.image.dim(1), w = item.image.dim(2);
        PpmImage left = tensor_to_ppm(item.image);
        PpmImage right = tensor_to_ppm(xhat);
        PpmImage pair;
        pair.height = h;
        pair.width = 2 * w;
        pair.pixels.resize(static_cast<std::size_t>(3) * h * 2 * w);
        for (int y2 = 0; y2 < h; ++y2) {
            std::copy_n(left.pixels.begin() + static_cast<std::ptrdiff_t>(y2) * w * 3, w * 3,
                        pair.pixels.begin() + static_cast<std::ptrdiff_t>(y2) * 2 * w * 3);
            std::copy_n(right.pixels.begin() + static_cast<std::ptrdiff_t>(y2) * w * 3, w * 3,
                        pair.pixels.begin() + static_cast<std::ptrdiff_t>(y2) * 2 * w * 3 + w * 3);
        }
        std::ostringstream name;
        name << "recon_" << i << ".ppm";
        write_ppm((fs::path(out) / name.str()).string(), pair);
        std::cout << "image " << i << ": psnr=" << p << " dB, bpp=" << static_cast<double>(r.item())
                  << "\n";
    }
    return 0;
}

int run_grad_check(std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    auto report = [&](const char* name, double err) {
        std::cout << name << ": max rel err " << err << "\n";
        worst = std::max(worst, err);
    };

    {
        std::vector<double> d(12);
        for (auto& v : d) v = rng.uniform(-1, 1);
        auto p = Tensor<double>::from_data({3, 4}, std::move(d));
        report("matmul+gelu", grad_check<double>(
                                 [](const Tensor<double>& x) {
                                     return sum_all(gelu(matmul(x, transpose2(x))));
                                 },
                                 p, 1e-6));
    }
    {
        std::vector<double> d(3 * 6 * 6), wd(2 * 3 * 3 * 3);
        for (auto& v : d) v = rng.uniform(-1, 1);
        for (auto& v : wd) v = rng.uniform(-0.5, 0.5);
        auto p = Tensor<double>::from_data({3, 6, 6}, std::move(d));
        auto w = Tensor<double>::from_data({2, 3, 3, 3}, std::move(wd));
        report("conv2d+softmax", grad_check<double>(
                                     [&w](const Tensor<double>& x) {
                                         auto y = softmax_lastdim(
                                             chw_to_tokens(conv2d(x, w, Tensor<double>(), 1, 1, 1)));
                                         return sum_all(mul(y, y));
                                     },
                                     p, 1e-6));
    }
    {
        ParamStore<double> cstore;
        auto codec = make_codec<double>(cstore, 4, 6, rng);
        std::vector<double> d(3 * 32 * 32);
        for (auto& v : d) v = rng.uniform();
        auto x = Tensor<double>::from_data({3, 32, 32}, std::move(d));
        Rng noise(7);
        auto loss_fn = [&] {
            Rng local(7);
            return rd_loss(codec, x, 0.1, QuantMode::train, local).total;
        };
        report("rd_loss wrt enc1.weight",
               grad_check_param<double>(loss_fn, codec.enc[0].w, 1e-5, {0, 11, 37}));
        report("rd_loss wrt ent_log_scale",
               grad_check_param<double>(loss_fn, codec.ent_log_scale, 1e-5, {0, 5}));
    }
    {
        ParamStore<double> cstore, store;
        auto codec = make_codec<double>(cstore, 8, 16, rng);
        ModelDesc desc;
        desc.variant = Variant::ci2p_vit;
        desc.image_size = 32;
        desc.depth = 1;
        desc.dim = 64;
        desc.heads = 4;
        desc.mlp_hidden = 32;
        desc.num_classes = 2;
        desc.codec_n = 8;
        desc.codec_m = 16;
        auto model = build_model<double>(desc, &codec, store, rng);
        std::vector<double> d(3 * 32 * 32);
        for (auto& v : d) v = rng.uniform();
        auto x = Tensor<double>::from_data({3, 32, 32}, std::move(d));
        auto loss_fn = [&] { return cross_entropy(model.forward(x), 0); };
        report("classifier wrt qkv",
               grad_check_param<double>(loss_fn, model.blocks[0].w_qkv, 1e-5, {0, 99, 12287}));
        report("classifier wrt head",
               grad_check_param<double>(loss_fn, model.head_w, 1e-5, {}));
    }

    if (worst >= 1e-4) {
        throw NumericError("grad-check: worst relative error " + std::to_string(worst) +
                           " exceeds 1e-4");
    }
    std::cout << "all gradient checks passed (worst " << worst << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CI2P-ViT tools: codec, classifier, and complexity analyzer"};
    app.require_subcommand(1);

    std::string config_path;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    std::string gen_out = "data";
    int gen_classes = 2, gen_per = 50, gen_size = 64;
    std::uint64_t gen_seed = 0;
    gen->add_option("--config", config_path);
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--classes", gen_classes);
    gen->add_option("--per-class", gen_per);
    gen->add_option("--size", gen_size);
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed);

    // train-codec
    auto* tc = app.add_subcommand("train-codec", "train the rate-distortion autoencoder");
    std::string tc_data, tc_out = "codec.ckpt", tc_metrics;
    int tc_n = 32, tc_m = 48, tc_steps = 300;
    double tc_lambda = 0.01 * 255 * 255, tc_lr = 1e-4;
    std::uint64_t tc_seed = 0;
    tc->add_option("--config", config_path);
    tc->add_option("--data", tc_data)->required();
    tc->add_option("--out", tc_out);
    tc->add_option("--metrics", tc_metrics);
    tc->add_option("--codec-n", tc_n);
    tc->add_option("--codec-m", tc_m);
    tc->add_option("--steps", tc_steps);
    tc->add_option("--lambda", tc_lambda);
    tc->add_option("--lr", tc_lr);
    auto* tc_seed_opt = tc->add_option("--seed", tc_seed);

    // train
    auto* tr = app.add_subcommand("train", "train a classifier variant");
    ModelOpts tr_model;
    tr_model.attach(tr);
    std::string tr_data, tr_codec, tr_out = "model.ckpt", tr_metrics = "metrics.csv";
    TrainConfig tr_cfg;
    tr->add_option("--config", config_path);
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--codec", tr_codec, "pretrained codec checkpoint (omit for random frozen)");
    tr->add_option("--out", tr_out);
    tr->add_option("--metrics", tr_metrics);
    tr->add_option("--lr", tr_cfg.lr);
    tr->add_option("--beta1", tr_cfg.beta1);
    tr->add_option("--beta2", tr_cfg.beta2);
    tr->add_option("--epochs", tr_cfg.epochs);
    tr->add_option("--batch-size", tr_cfg.batch_size);
    tr->add_option("--flip-prob", tr_cfg.flip_prob);
    tr->add_flag("--cosine", tr_cfg.cosine, "cosine LR decay (default constant)");
    auto* tr_seed_opt = tr->add_option("--seed", tr_cfg.seed);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained classifier");
    std::string ev_ckpt, ev_desc, ev_data, ev_split = "val";
    ev->add_option("--config", config_path);
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--desc", ev_desc, "model description file (default <checkpoint>.desc)");
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val"}));

    // analyze
    auto* an = app.add_subcommand("analyze", "analytical FLOPs/parameter model");
    std::string an_variant = "all", an_sizes = "256,384,512", an_format = "table";
    an->add_option("--config", config_path);
    an->add_option("--variant", an_variant);
    an->add_option("--sizes", an_sizes);
    an->add_option("--format", an_format)->check(CLI::IsMember({"csv", "table"}));

    // reconstruct
    auto* rc = app.add_subcommand("reconstruct", "round-trip images through the codec");
    std::string rc_codec, rc_data, rc_out = "recon";
    int rc_n = 32, rc_m = 48, rc_count = 4;
    rc->add_option("--config", config_path);
    rc->add_option("--codec", rc_codec)->required();
    rc->add_option("--data", rc_data)->required();
    rc->add_option("--out", rc_out);
    rc->add_option("--codec-n", rc_n);
    rc->add_option("--codec-m", rc_m);
    rc->add_option("--count", rc_count);

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
    std::uint64_t gc_seed = 0;
    gc->add_option("--config", config_path);
    auto* gc_seed_opt = gc->add_option("--seed", gc_seed);

    try {
        app.parse(argc, argv);
        for (auto* cmd : {gen, tc, tr, ev, an, rc, gc}) {
            if (cmd->parsed() && !config_path.empty()) apply_config(cmd, config_path);
        }
        resolve_seed(gen_seed_opt, gen_seed);
        resolve_seed(tc_seed_opt, tc_seed);
        resolve_seed(tr_seed_opt, tr_cfg.seed);
        resolve_seed(gc_seed_opt, gc_seed);

        if (gen->parsed()) return run_gen_data(gen_out, gen_classes, gen_per, gen_size, gen_seed);
        if (tc->parsed()) {
            return run_train_codec(tc_data, tc_out, tc_metrics, tc_n, tc_m, tc_steps, tc_lambda,
                                   tc_lr, tc_seed);
        }
        if (tr->parsed()) return run_train(tr_model, tr_data, tr_codec, tr_out, tr_metrics, tr_cfg);
        if (ev->parsed()) return run_eval(ev_ckpt, ev_desc, ev_data, ev_split);
        if (an->parsed()) return run_analyze(an_variant, an_sizes, an_format);
        if (rc->parsed()) return run_reconstruct(rc_codec, rc_n, rc_m, rc_data, rc_out, rc_count);
        if (gc->parsed()) return run_grad_check(gc_seed);
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
