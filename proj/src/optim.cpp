#include "patn/optim.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "patn/rng.hpp"

namespace patn {

using ad::Node;
using ad::Tape;

AdamState AdamState::init(std::span<Node* const> params) {
    AdamState s;
    for (const Node* p : params) {
        s.first_moment.emplace_back(p->value.rows(), p->value.cols());
        s.second_moment.emplace_back(p->value.rows(), p->value.cols());
    }
    return s;
}

void adam_step(std::span<Node* const> params, AdamState& state, const AdamHyper& hyper) {
    if (params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: state tracks " +
                                    std::to_string(state.first_moment.size()) + " params, got " +
                                    std::to_string(params.size()));
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Node* p = params[i];
        Matrix& m = state.first_moment[i];
        Matrix& v = state.second_moment[i];
        if (!m.same_shape(p->value))
            throw std::invalid_argument("adam_step: param " + std::to_string(i) + " shape " +
                                        p->value.shape_str() + " != state shape " + m.shape_str());
        if (!p->grad.empty() && !p->grad.same_shape(p->value))
            throw std::invalid_argument("adam_step: grad shape mismatch for param " + std::to_string(i));
        for (size_t k = 0; k < p->value.size(); ++k) {
            const double g = p->grad.empty() ? 0.0 : p->grad[k];
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            p->value[k] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
        }
    }
}

namespace {

void clip_gradients(std::span<Node* const> params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const Node* p : params)
        for (size_t k = 0; k < p->grad.size(); ++k) sq += p->grad[k] * p->grad[k];
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double factor = max_norm / norm;
    for (Node* p : params)
        for (size_t k = 0; k < p->grad.size(); ++k) p->grad[k] *= factor;
}

}  // namespace

TrainResult train(const Corpus& corpus, const std::vector<Triplet>& triplets,
                  const EncoderParams& initial, const LossConfig& loss_cfg,
                  const TrainSchedule& schedule, const AdamHyper& hyper, double grad_clip_norm,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    if (triplets.empty()) throw std::invalid_argument("train: empty triplet set");
    if (schedule.epochs < 1 || schedule.batch_size < 1)
        throw std::invalid_argument("train: epochs and batch_size must be >= 1");
    loss_cfg.validate();

    EncoderVars vars = EncoderVars::make(initial);
    AdamState adam = AdamState::init(vars.all());

    TrainResult result;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const auto batches =
            plan_batches(triplets.size(), schedule.batch_size,
                         mix_seed(schedule.shuffle_seed, static_cast<uint64_t>(epoch)));
        EpochStats stats;
        stats.epoch = epoch;
        long seen = 0;
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            TripletBatch batch = assemble_batch(corpus, triplets, batches[bi]);
            Tape tape;
            TripletBatchLoss loss;
            try {
                BatchEncodeOut encoded = encode_batch(tape, vars, batch.frames_by_t, batch.lengths);
                loss = patn_loss(tape, encoded, batch.num_triplets, batch.labels, vars, loss_cfg);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: " + std::string(e.what()) + " at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(bi));
            }
            const double total = loss.total->value.at(0, 0);
            if (!std::isfinite(total))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(bi));
            vars.zero_grads();
            tape.backward(loss.total, /*release_memory=*/true);
            clip_gradients(vars.all(), grad_clip_norm);
            adam_step(vars.all(), adam, hyper);

            const double w = batch.num_triplets;
            stats.total += w * total;
            stats.triplet_term += w * loss.triplet_term;
            stats.ce_term += w * loss.ce_term;
            stats.active_fraction += w * loss.active_fraction;
            seen += batch.num_triplets;
        }
        stats.total /= seen;
        stats.triplet_term /= seen;
        stats.ce_term /= seen;
        stats.active_fraction /= seen;
        result.log.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    result.params = vars.to_params();
    return result;
}

void write_loss_log(const std::string& path, const std::vector<EpochStats>& log) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_loss_log: cannot open " + path);
    os << "epoch,total,triplet_term,ce_term,active_fraction\n";
    os.precision(17);
    for (const auto& e : log)
        os << e.epoch << "," << e.total << "," << e.triplet_term << "," << e.ce_term << ","
           << e.active_fraction << "\n";
    if (!os) throw std::runtime_error("write_loss_log: write failed for " + path);
}

}  // namespace patn
