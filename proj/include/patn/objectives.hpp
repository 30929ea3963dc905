#pragma once

#include <span>
#include <string>
#include <vector>

#include "patn/autodiff.hpp"
#include "patn/encoder.hpp"

namespace patn {

enum class CeBranchPolicy { anchor_only, all_branches };

CeBranchPolicy ce_policy_from_string(const std::string& s);
std::string to_string(CeBranchPolicy p);

struct LossConfig {
    double margin = 0.5;   // [0, 2], cosine distance range
    double lambda = 0.1;   // [0, 1], convex combination weight
    CeBranchPolicy ce_branch_policy = CeBranchPolicy::all_branches;

    void validate() const;
};

/// Combined loss of one triplet batch. total is the graph node to backprop;
/// the scalar fields are detached values for logging.
struct TripletBatchLoss {
    ad::Node* total = nullptr;
    double triplet_term = 0.0;
    double ce_term = 0.0;
    double active_fraction = 0.0;  // triplets with a violated margin
};

/// 1 - cos(a, b) for column vectors; norms are guarded with eps = 1e-12, and
/// a zero-norm argument bumps the counter below and warns once.
ad::Node* cosine_distance(ad::Tape& t, ad::Node* a, ad::Node* b);

/// Column-wise variant: a and b are (M x N), result is (1 x N).
ad::Node* cosine_distance_cols(ad::Tape& t, ad::Node* a, ad::Node* b);

/// Value-level cosine distance used by evaluation code.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Number of zero-norm guards hit since process start.
long zero_norm_guard_count();

/// max(0, margin + d_plus - d_minus) on embedding column vectors.
ad::Node* triplet_loss(ad::Tape& t, ad::Node* anchor, ad::Node* same, ad::Node* different, double margin);

/// Mean over frames of -log softmax(W h_n + b)[y_n]. `lower` holds one
/// (2H x 1) node per frame.
ad::Node* frame_cross_entropy(ad::Tape& t, const std::vector<ad::Node*>& lower,
                              const std::vector<int>& labels, ad::Node* head_weights,
                              ad::Node* head_bias);

/// Batched form: lower[t] is (2H x N), labels[t] has N entries with -1 for
/// padding (excluded from the mean).
ad::Node* frame_cross_entropy_batch(ad::Tape& t, const std::vector<ad::Node*>& lower,
                                    const std::vector<std::vector<int>>& labels,
                                    ad::Node* head_weights, ad::Node* head_bias);

/// Combined loss over an encoded triplet batch whose columns are laid out
/// [anchors | sames | differents], each block `num_triplets` wide.
/// frame_labels[t][col] carries the phone-state label or -1 on padding.
TripletBatchLoss patn_loss(ad::Tape& t, const BatchEncodeOut& encoded, int num_triplets,
                           const std::vector<std::vector<int>>& frame_labels, const EncoderVars& vars,
                           const LossConfig& cfg);

}  // namespace patn
