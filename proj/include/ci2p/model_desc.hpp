#pragma once

#include <map>
#include <string>

namespace ci2p {

enum class Variant { vit_b16, ci2p_vit, ci2p_vit_ds };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Declarative architecture description consumed by both the runtime builder
// and the analytical FLOPs/parameter model.
struct ModelDesc {
    Variant variant = Variant::vit_b16;
    int image_size = 256;
    int depth = 12;
    int dim = 768;
    int heads = 12;
    int mlp_hidden = 3072;
    int ds_early_dim = 192;  // token dim before the mid-network reshape
    int ds_split = 6;        // blocks run at the early scale
    int num_classes = 1000;
    bool use_pos_embed = true;
    int patch = 16;       // vit_b16 patch size
    int codec_n = 128;    // codec hidden width
    int codec_m = 192;    // codec latent channels

    // Hidden width of the early-scale MLP keeps the 4x expansion ratio.
    int early_mlp_hidden() const { return mlp_hidden * ds_early_dim / dim; }
    int token_count() const;
    void validate() const;  // throws ConfigError

    std::string serialize() const;  // flat key=value lines
    static ModelDesc deserialize(const std::map<std::string, std::string>& kv);
};

}  // namespace ci2p
