#include "patn/objectives.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace patn {

using ad::Node;
using ad::Tape;

namespace {

constexpr double kNormEps = 1e-12;

std::atomic<long> g_zero_norm_hits{0};

void note_zero_norm() {
    if (g_zero_norm_hits.fetch_add(1) == 0)
        std::cerr << "patn: warning: zero-norm embedding in cosine distance (guarded)\n";
}

Node* one_minus(Tape& t, Node* x) { return add_const(t, scale(t, x, -1.0), 1.0); }

}  // namespace

long zero_norm_guard_count() { return g_zero_norm_hits.load(); }

CeBranchPolicy ce_policy_from_string(const std::string& s) {
    if (s == "anchor_only") return CeBranchPolicy::anchor_only;
    if (s == "all_branches") return CeBranchPolicy::all_branches;
    throw std::invalid_argument("ce_branch_policy must be anchor_only or all_branches, got '" + s + "'");
}

std::string to_string(CeBranchPolicy p) {
    return p == CeBranchPolicy::anchor_only ? "anchor_only" : "all_branches";
}

void LossConfig::validate() const {
    if (!(margin >= 0.0 && margin <= 2.0))
        throw std::invalid_argument("loss.margin must be in [0, 2], got " + std::to_string(margin));
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("loss.lambda must be in [0, 1], got " + std::to_string(lambda));
}

Node* cosine_distance_cols(Tape& t, Node* a, Node* b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("cosine_distance: shape mismatch " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
    Node* na = ad::sqrt(t, column_sums(t, mul(t, a, a)));
    Node* nb = ad::sqrt(t, column_sums(t, mul(t, b, b)));
    for (int c = 0; c < na->value.cols(); ++c)
        if (na->value.at(0, c) < kNormEps || nb->value.at(0, c) < kNormEps) note_zero_norm();
    Node* denom = mul(t, add_const(t, na, kNormEps), add_const(t, nb, kNormEps));
    Node* dots = column_sums(t, mul(t, a, b));
    return one_minus(t, ad::div(t, dots, denom));
}

Node* cosine_distance(Tape& t, Node* a, Node* b) {
    if (a->value.cols() != 1 || b->value.cols() != 1)
        throw std::invalid_argument("cosine_distance: expected column vectors");
    return cosine_distance_cols(t, a, b);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < kNormEps || nb < kNormEps) note_zero_norm();
    return 1.0 - dot / ((na + kNormEps) * (nb + kNormEps));
}

Node* triplet_loss(Tape& t, Node* anchor, Node* same, Node* different, double margin) {
    Node* d_plus = cosine_distance(t, anchor, same);
    Node* d_minus = cosine_distance(t, anchor, different);
    return relu(t, add_const(t, sub(t, d_plus, d_minus), margin));
}

namespace {

Node* ce_mean_over_frames(Tape& t, const std::vector<Node*>& lower,
                          const std::vector<std::vector<int>>& labels, Node* head_w, Node* head_b) {
    long valid = 0;
    for (const auto& row : labels)
        for (int y : row)
            if (y >= 0) ++valid;
    if (valid == 0) throw std::invalid_argument("frame_cross_entropy: no labeled frames");

    Node* total = nullptr;
    for (size_t ti = 0; ti < lower.size(); ++ti) {
        bool any = false;
        for (int y : labels[ti])
            if (y >= 0) any = true;
        if (!any) continue;
        Node* logits = add_col_broadcast(t, matmul(t, head_w, lower[ti]), head_b);
        Node* nll = sum_all(t, softmax_nll_cols(t, logits, labels[ti]));
        total = total ? add(t, total, nll) : nll;
    }
    return scale(t, total, 1.0 / static_cast<double>(valid));
}

}  // namespace

Node* frame_cross_entropy(Tape& t, const std::vector<Node*>& lower, const std::vector<int>& labels,
                          Node* head_weights, Node* head_bias) {
    if (lower.size() != labels.size())
        throw std::invalid_argument("frame_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(lower.size()) + " frames");
    std::vector<std::vector<int>> rows(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw std::out_of_range("frame_cross_entropy: negative label");
        rows[i] = {labels[i]};
    }
    return ce_mean_over_frames(t, lower, rows, head_weights, head_bias);
}

Node* frame_cross_entropy_batch(Tape& t, const std::vector<Node*>& lower,
                                const std::vector<std::vector<int>>& labels, Node* head_weights,
                                Node* head_bias) {
    if (lower.size() != labels.size())
        throw std::invalid_argument("frame_cross_entropy_batch: label rows != frame count");
    return ce_mean_over_frames(t, lower, labels, head_weights, head_bias);
}

TripletBatchLoss patn_loss(Tape& t, const BatchEncodeOut& encoded, int num_triplets,
                           const std::vector<std::vector<int>>& frame_labels, const EncoderVars& vars,
                           const LossConfig& cfg) {
    cfg.validate();
    const int b = num_triplets;
    if (encoded.embeddings->value.cols() != 3 * b)
        throw std::invalid_argument("patn_loss: batch holds " +
                                    std::to_string(encoded.embeddings->value.cols()) +
                                    " sequences, expected 3 x " + std::to_string(b));

    Node* anchors = slice_cols(t, encoded.embeddings, 0, b);
    Node* sames = slice_cols(t, encoded.embeddings, b, 2 * b);
    Node* differents = slice_cols(t, encoded.embeddings, 2 * b, 3 * b);
    Node* d_plus = cosine_distance_cols(t, anchors, sames);
    Node* d_minus = cosine_distance_cols(t, anchors, differents);
    // the hinge maps NaN to 0, so poisoned embeddings must be caught here
    if (!d_plus->value.all_finite() || !d_minus->value.all_finite())
        throw std::runtime_error("patn_loss: non-finite cosine distance (check encoder state)");
    Node* hinge = relu(t, add_const(t, sub(t, d_plus, d_minus), cfg.margin));
    Node* triplet_mean = scale(t, sum_all(t, hinge), 1.0 / b);

    TripletBatchLoss out;
    out.triplet_term = triplet_mean->value.at(0, 0);
    int active = 0;
    for (int c = 0; c < b; ++c)
        if (hinge->value.at(0, c) > 0.0) ++active;
    out.active_fraction = static_cast<double>(active) / b;

    if (cfg.lambda == 0.0) {
        out.total = triplet_mean;
        return out;
    }

    if (frame_labels.empty())
        throw std::invalid_argument("patn_loss: lambda > 0 requires frame labels");
    std::vector<std::vector<int>> selected = frame_labels;
    if (cfg.ce_branch_policy == CeBranchPolicy::anchor_only) {
        for (auto& row : selected)
            for (size_t c = static_cast<size_t>(b); c < row.size(); ++c) row[c] = -1;
    }
    Node* ce_mean =
        ce_mean_over_frames(t, encoded.lower, selected, vars.head_weights(), vars.head_bias());
    out.ce_term = ce_mean->value.at(0, 0);

    if (cfg.lambda == 1.0) {
        out.total = ce_mean;
        return out;
    }
    out.total = add(t, scale(t, triplet_mean, 1.0 - cfg.lambda), scale(t, ce_mean, cfg.lambda));
    return out;
}

}  // namespace patn
