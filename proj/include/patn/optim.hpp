#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patn/autodiff.hpp"
#include "patn/corpus.hpp"
#include "patn/encoder.hpp"
#include "patn/objectives.hpp"

namespace patn {

struct AdamHyper {
    double learning_rate = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Per-parameter first/second moments plus the shared step counter.
struct AdamState {
    long step = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;

    static AdamState init(std::span<ad::Node* const> params);
};

/// One bias-corrected Adam update in place. Parameters with no gradient
/// this step are treated as having zero gradient.
void adam_step(std::span<ad::Node* const> params, AdamState& state, const AdamHyper& hyper);

struct TrainSchedule {
    int epochs = 40;
    int batch_size = 128;
    uint64_t shuffle_seed = 2;
};

struct EpochStats {
    int epoch = 0;
    double total = 0.0;
    double triplet_term = 0.0;
    double ce_term = 0.0;
    double active_fraction = 0.0;
};

struct TrainResult {
    EncoderParams params;
    std::vector<EpochStats> log;
};

/// Epoch-based training over pre-sampled triplets: per-epoch shuffle, fixed
/// batches (last partial kept), deterministic given seeds. Aborts with a
/// diagnostic naming the batch if the loss goes non-finite.
TrainResult train(const Corpus& corpus, const std::vector<Triplet>& triplets,
                  const EncoderParams& initial, const LossConfig& loss_cfg,
                  const TrainSchedule& schedule, const AdamHyper& hyper, double grad_clip_norm = 0.0,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

/// CSV: epoch, total, triplet_term, ce_term, active_fraction.
void write_loss_log(const std::string& path, const std::vector<EpochStats>& log);

}  // namespace patn
