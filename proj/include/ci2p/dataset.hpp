#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ci2p/errors.hpp"
#include "ci2p/ppm.hpp"
#include "ci2p/rng.hpp"
#include "ci2p/tensor.hpp"

namespace ci2p {

template <class S>
struct DatasetItem {
    Tensor<S> image;  // [3,H,W] in [0,1]
    int label = 0;
};

template <class S>
struct Dataset {
    std::vector<DatasetItem<S>> items;
    int class_count = 0;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
};

// Deterministic 80/20 split: every run of five consecutive indices donates one
// val item, chosen by hashing the group index. Exact 80/20 whenever the item
// count is a multiple of five.
inline void assign_split(int n, std::vector<int>& train_idx, std::vector<int>& val_idx) {
    train_idx.clear();
    val_idx.clear();
    for (int g = 0; 5 * g < n; ++g) {
        std::uint64_t h = static_cast<std::uint64_t>(g);
        const int pick = 5 * g + static_cast<int>(splitmix64(h) % 5);
        for (int i = 5 * g; i < std::min(5 * g + 5, n); ++i) {
            (i == pick ? val_idx : train_idx).push_back(i);
        }
    }
}

namespace detail {

// Signed distance test for a regular n-gon: inside when the point's radius is
// below the boundary radius along its direction.
inline bool inside_ngon(double px, double py, double cx, double cy, double radius, double rot,
                        int n) {
    const double dx = px - cx, dy = py - cy;
    const double r = std::sqrt(dx * dx + dy * dy);
    if (r < 1e-12) return true;
    const double two_pi = 2.0 * 3.14159265358979323846;
    double phi = std::atan2(dy, dx) - rot;
    const double sector = two_pi / n;
    phi = std::fmod(std::fmod(phi, sector) + sector, sector) - sector / 2.0;
    const double boundary = radius * std::cos(sector / 2.0) / std::cos(phi);
    return r <= boundary;
}

}  // namespace detail

// Labeled shape-classification set: class k draws a filled regular (k+3)-gon
// at a random pose on a textured noise background. Labels run round-robin so
// every prefix is roughly balanced.
template <class S>
Dataset<S> gen_synthetic(int classes, int per_class, int size, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
    if (size <= 0 || size % 32 != 0) {
        throw ConfigError("gen_synthetic: size must be a positive multiple of 32");
    }
    if (per_class < 1) throw ConfigError("gen_synthetic: per_class must be positive");

    Dataset<S> ds;
    ds.class_count = classes;
    Rng root(seed);
    const int total = classes * per_class;
    for (int i = 0; i < total; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i));
        const int label = i % classes;
        const int sides = label + 3;

        const double cx = size * rng.uniform(0.45, 0.55);
        const double cy = size * rng.uniform(0.45, 0.55);
        const double radius = size * rng.uniform(0.28, 0.36);
        const double rot = rng.uniform(0.0, 6.283185307179586);
        // bright foreground over a dark textured background
        const double fg[3] = {rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0)};
        const double bg[3] = {rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)};
        const double wave_freq = rng.uniform(0.05, 0.2);
        const double wave_phase = rng.uniform(0.0, 6.283185307179586);

        std::vector<S> data(static_cast<std::size_t>(3) * size * size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const bool in =
                    detail::inside_ngon(x + 0.5, y + 0.5, cx, cy, radius, rot, sides);
                const double wave = 0.05 * std::sin(wave_freq * (x + 2 * y) + wave_phase);
                for (int c = 0; c < 3; ++c) {
                    double v = in ? fg[c] : bg[c] + wave + rng.uniform(0.0, 0.1);
                    v = std::min(1.0, std::max(0.0, v));
                    data[(static_cast<std::size_t>(c) * size + y) * size + x] = static_cast<S>(v);
                }
            }
        }
        ds.items.push_back({Tensor<S>::from_data({3, size, size}, std::move(data)), label});
    }
    assign_split(total, ds.train_idx, ds.val_idx);
    return ds;
}

template <class S>
Tensor<S> ppm_to_tensor(const PpmImage& img) {
    std::vector<S> data(static_cast<std::size_t>(3) * img.height * img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const std::uint8_t b =
                    img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 +
                               static_cast<std::size_t>(c)];
                data[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
                    static_cast<S>(b / 255.0);
            }
        }
    }
    return Tensor<S>::from_data({3, img.height, img.width}, std::move(data));
}

template <class S>
PpmImage tensor_to_ppm(const Tensor<S>& t) {
    if (t.rank() != 3 || t.dim(0) != 3) {
        throw ContractError("tensor_to_ppm: expected [3,H,W], got " + shape_str(t.shape()));
    }
    PpmImage img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.pixels.resize(static_cast<std::size_t>(3) * img.height * img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = static_cast<double>(
                    t.data()[(static_cast<std::size_t>(c) * img.height + y) * img.width + x]);
                v = std::min(1.0, std::max(0.0, v));
                img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 +
                           static_cast<std::size_t>(c)] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

// Reads manifest.csv (`path,label`, paths relative to dir) plus the PPM files
// it names. All images must share the dimensions of the first.
template <class S>
Dataset<S> load_dataset(const std::string& dir) {
    const std::string manifest = dir + "/manifest.csv";
    std::ifstream is(manifest);
    if (!is) throw DataError(manifest + ": cannot open");
    std::string line;
    if (!std::getline(is, line) || line != "path,label") {
        throw DataError(manifest + ": expected header 'path,label'");
    }
    Dataset<S> ds;
    int h = -1, w = -1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw DataError(manifest + ": malformed row '" + line + "'");
        const std::string rel = line.substr(0, comma);
        int label = 0;
        try {
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw DataError(manifest + ": bad label in row '" + line + "'");
        }
        if (label < 0) throw DataError(manifest + ": negative label for " + rel);
        const std::string path = dir + "/" + rel;
        PpmImage img = read_ppm(path);
        if (h < 0) {
            h = img.height;
            w = img.width;
        } else if (img.height != h || img.width != w) {
            throw DataError(path + ": dimensions " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + " differ from first image");
        }
        ds.items.push_back({ppm_to_tensor<S>(img), label});
        ds.class_count = std::max(ds.class_count, label + 1);
    }
    if (ds.items.empty()) throw DataError(manifest + ": no entries");
    assign_split(static_cast<int>(ds.items.size()), ds.train_idx, ds.val_idx);
    return ds;
}

// Writes images as zero-padded PPMs plus manifest.csv in the loadable layout.
template <class S>
void save_dataset(const std::string& dir, const Dataset<S>& ds) {
    const std::string manifest = dir + "/manifest.csv";
    std::ofstream os(manifest);
    if (!os) throw DataError(manifest + ": cannot open for writing");
    os << "path,label\n";
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        std::ostringstream name;
        name << "img_";
        name.fill('0');
        name.width(5);
        name << i;
        name << ".ppm";
        write_ppm(dir + "/" + name.str(), tensor_to_ppm(ds.items[i].image));
        os << name.str() << ',' << ds.items[i].label << '\n';
    }
    if (!os) throw DataError(manifest + ": write failed");
}

// Horizontal mirror of [3,H,W].
template <class S>
Tensor<S> flip_h(const Tensor<S>& x) {
    if (x.rank() != 3) throw ContractError("flip_h: expected [3,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<S> out(x.data().size());
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                out[(static_cast<std::size_t>(ci) * h + y) * w + xx] =
                    x.data()[(static_cast<std::size_t>(ci) * h + y) * w + (w - 1 - xx)];
            }
        }
    }
    return Tensor<S>::from_data(x.shape(), std::move(out));
}

template <class S>
Tensor<S> augment_flip(const Tensor<S>& x, Rng& rng, double p) {
    if (p < 0.0 || p > 1.0) throw ConfigError("augment_flip: probability out of [0,1]");
    return rng.uniform() < p ? flip_h(x) : x;
}

}  // namespace ci2p
