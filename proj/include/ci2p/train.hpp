#pragma once

#include <string>
#include <vector>

#include "ci2p/checkpoint.hpp"
#include "ci2p/dataset.hpp"
#include "ci2p/vit.hpp"

namespace ci2p {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int epochs = 10;
    int batch_size = 32;
    double flip_prob = 0.5;
    std::uint64_t seed = 0;
    double lambda = 0.01 * 255.0 * 255.0;  // codec rate-distortion weight
    bool cosine = false;                   // off by default: constant LR

    void validate() const {
        if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be positive");
        if (epochs < 0) throw ConfigError("TrainConfig: epochs must be non-negative");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be positive");
        if (flip_prob < 0.0 || flip_prob > 1.0) {
            throw ConfigError("TrainConfig: flip_prob out of [0,1]");
        }
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ConfigError("TrainConfig: betas out of [0,1)");
        }
        if (lambda < 0.0) throw ConfigError("TrainConfig: lambda must be non-negative");
    }
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

// Top-1 accuracy over the listed items; argmax ties break toward the lower
// class index.
template <class S>
double evaluate(const Classifier<S>& model, const Dataset<S>& ds, const std::vector<int>& indices) {
    if (indices.empty()) return 0.0;
    int hits = 0;
    for (int idx : indices) {
        const auto& item = ds.items[static_cast<std::size_t>(idx)];
        auto logits = model.forward(item.image);
        int best = 0;
        for (int c = 1; c < logits.dim(0); ++c) {
            if (static_cast<double>(logits.data()[static_cast<std::size_t>(c)]) >
                static_cast<double>(logits.data()[static_cast<std::size_t>(best)])) {
                best = c;
            }
        }
        if (best == item.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(indices.size());
}

// Adam + cross-entropy over shuffled mini-batches. Appends one train and one
// val row per epoch to the metrics CSV (`epoch,step,split,loss,accuracy`),
// rewrites the checkpoint after every epoch, and audits that frozen codec
// parameters never move.
template <class S>
std::vector<EpochMetrics> train_classifier(Classifier<S>& model, ParamStore<S>& store,
                                           const Dataset<S>& ds, const TrainConfig& cfg,
                                           const std::string& metrics_csv,
                                           const std::string& checkpoint_path) {
    cfg.validate();
    for (const auto& item : ds.items) {
        if (item.label < 0 || item.label >= model.desc.num_classes) {
            throw DataError("train_classifier: label " + std::to_string(item.label) +
                            " outside the model's " + std::to_string(model.desc.num_classes) +
                            " classes");
        }
    }

    std::ofstream csv(metrics_csv);
    if (!csv) throw DataError(metrics_csv + ": cannot open for writing");
    csv << "epoch,step,split,loss,accuracy\n";

    std::vector<EpochMetrics> history;
    if (cfg.epochs == 0) return history;

    const auto frozen_before = store.snapshot("codec.");
    Rng root(cfg.seed);
    std::vector<int> order = ds.train_idx;
    long global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng epoch_rng = root.fork(static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);
        const double lr = cfg.cosine
                              ? cfg.lr * 0.5 *
                                    (1.0 + std::cos(3.14159265358979323846 * (epoch - 1) / cfg.epochs))
                              : cfg.lr;

        double loss_sum = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch = std::min<std::size_t>(
                static_cast<std::size_t>(cfg.batch_size), order.size() - pos);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& item = ds.items[static_cast<std::size_t>(order[pos + b])];
                auto x = augment_flip(item.image, epoch_rng, cfg.flip_prob);
                auto loss = cross_entropy(model.forward(x), item.label);
                if (!loss.all_finite()) {
                    throw NumericError("train_classifier: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", step " +
                                       std::to_string(global_step + 1));
                }
                loss_sum += static_cast<double>(loss.item());
                scale(loss, 1.0 / static_cast<double>(batch)).backward();
            }
            pos += batch;
            ++global_step;
            store.adam_step(lr, cfg.beta1, cfg.beta2, 1e-8, global_step);
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.train_acc = evaluate(model, ds, ds.train_idx);
        m.val_acc = evaluate(model, ds, ds.val_idx);
        history.push_back(m);

        csv << epoch << ',' << global_step << ",train," << m.train_loss << ',' << m.train_acc
            << '\n';
        csv << epoch << ',' << global_step << ",val,," << m.val_acc << '\n';
        csv.flush();
        save_checkpoint(checkpoint_path, store);
    }

    if (store.snapshot("codec.") != frozen_before) {
        throw ContractError("train_classifier: frozen codec parameters changed during training");
    }
    return history;
}

}  // namespace ci2p
