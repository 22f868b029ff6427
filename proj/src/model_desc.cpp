#include "ci2p/model_desc.hpp"

#include <sstream>

#include "ci2p/errors.hpp"

namespace ci2p {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::vit_b16: return "vit_b16";
        case Variant::ci2p_vit: return "ci2p_vit";
        case Variant::ci2p_vit_ds: return "ci2p_vit_ds";
    }
    throw ConfigError("unknown variant enum value");
}

Variant parse_variant(const std::string& name) {
    if (name == "vit_b16") return Variant::vit_b16;
    if (name == "ci2p_vit") return Variant::ci2p_vit;
    if (name == "ci2p_vit_ds") return Variant::ci2p_vit_ds;
    throw ConfigError("unknown variant '" + name + "' (expected vit_b16|ci2p_vit|ci2p_vit_ds)");
}

int ModelDesc::token_count() const {
    switch (variant) {
        case Variant::vit_b16: return (image_size / patch) * (image_size / patch);
        case Variant::ci2p_vit: return (image_size / 32) * (image_size / 32);
        case Variant::ci2p_vit_ds: return (image_size / 16) * (image_size / 16);
    }
    throw ConfigError("unknown variant enum value");
}

void ModelDesc::validate() const {
    if (dim <= 0 || depth <= 0 || heads <= 0 || mlp_hidden <= 0 || num_classes <= 0 ||
        image_size <= 0) {
        throw ConfigError("ModelDesc: all sizes must be positive");
    }
    if (dim % heads != 0) {
        throw ConfigError("ModelDesc: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
    switch (variant) {
        case Variant::vit_b16:
            if (image_size % patch != 0) {
                throw ConfigError("ModelDesc: image_size must be a multiple of patch size");
            }
            break;
        case Variant::ci2p_vit:
            if (image_size % 32 != 0) {
                throw ConfigError("ModelDesc: ci2p_vit needs image_size multiple of 32");
            }
            if (dim != 4 * codec_m) {
                throw ConfigError("ModelDesc: ci2p_vit requires dim == 4*codec_m (PatchReshape "
                                  "quadruples the latent channels)");
            }
            break;
        case Variant::ci2p_vit_ds:
            if (image_size % 32 != 0) {
                throw ConfigError("ModelDesc: ci2p_vit_ds needs image_size multiple of 32");
            }
            if (ds_early_dim != codec_m) {
                throw ConfigError("ModelDesc: ci2p_vit_ds requires ds_early_dim == codec_m");
            }
            if (dim != 4 * ds_early_dim) {
                throw ConfigError("ModelDesc: ci2p_vit_ds requires dim == 4*ds_early_dim");
            }
            if (ds_split >= depth || ds_split < 1) {
                throw ConfigError("ModelDesc: need 1 <= ds_split < depth");
            }
            if (ds_early_dim % heads != 0) {
                throw ConfigError("ModelDesc: ds_early_dim not divisible by heads");
            }
            if ((mlp_hidden * ds_early_dim) % dim != 0) {
                throw ConfigError("ModelDesc: early MLP hidden width is not integral");
            }
            break;
    }
}

std::string ModelDesc::serialize() const {
    std::ostringstream os;
    os << "variant=" << variant_name(variant) << "\n"
       << "image_size=" << image_size << "\n"
       << "depth=" << depth << "\n"
       << "dim=" << dim << "\n"
       << "heads=" << heads << "\n"
       << "mlp_hidden=" << mlp_hidden << "\n"
       << "ds_early_dim=" << ds_early_dim << "\n"
       << "ds_split=" << ds_split << "\n"
       << "num_classes=" << num_classes << "\n"
       << "use_pos_embed=" << (use_pos_embed ? 1 : 0) << "\n"
       << "patch=" << patch << "\n"
       << "codec_n=" << codec_n << "\n"
       << "codec_m=" << codec_m << "\n";
    return os.str();
}

ModelDesc ModelDesc::deserialize(const std::map<std::string, std::string>& kv) {
    ModelDesc d;
    auto geti = [&](const char* key, int& out) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        try {
            out = std::stoi(it->second);
        } catch (const std::exception&) {
            throw ConfigError(std::string("ModelDesc: bad integer for ") + key + ": " + it->second);
        }
    };
    if (auto it = kv.find("variant"); it != kv.end()) d.variant = parse_variant(it->second);
    geti("image_size", d.image_size);
    geti("depth", d.depth);
    geti("dim", d.dim);
    geti("heads", d.heads);
    geti("mlp_hidden", d.mlp_hidden);
    geti("ds_early_dim", d.ds_early_dim);
    geti("ds_split", d.ds_split);
    geti("num_classes", d.num_classes);
    geti("patch", d.patch);
    geti("codec_n", d.codec_n);
    geti("codec_m", d.codec_m);
    if (auto it = kv.find("use_pos_embed"); it != kv.end()) d.use_pos_embed = it->second != "0";
    d.validate();
    return d;
}

}  // namespace ci2p
