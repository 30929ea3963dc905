#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "patn/autodiff.hpp"
#include "patn/matrix.hpp"

namespace patn {

/// One LSTM cell. Gate blocks in the 4H dimension are ordered
/// [input, forget, candidate, output].
struct LstmCellParams {
    Matrix input_weights;      // 4H x D
    Matrix recurrent_weights;  // 4H x H
    Matrix biases;             // 4H x 1
};

struct EncoderConfig {
    int layers = 2;
    int hidden = 128;
    int input_dim = 40;
    int num_classes = 48;
    int tap_layer = 1;  // 1-based layer whose per-frame states feed the softmax head
};

/// Full parameter set of the stacked bidirectional encoder plus the
/// frame-classification softmax head attached to the tap layer.
struct EncoderParams {
    EncoderConfig config;
    std::vector<std::pair<LstmCellParams, LstmCellParams>> layers;  // (forward, backward)
    Matrix head_weights;  // C x 2H
    Matrix head_bias;     // C x 1

    /// Per-frame input width of layer `index` (0-based): D for the first
    /// layer, 2H for the rest.
    int layer_input_dim(int index) const {
        return index == 0 ? config.input_dim : 2 * config.hidden;
    }
};

/// Glorot-uniform weights, zero biases except the forget-gate block (1.0).
/// Deterministic per seed.
EncoderParams init_params(const EncoderConfig& config, uint64_t seed);

/// Per-frame hidden states of the tap layer, one row per frame (T x 2H).
struct FrameStates {
    Matrix per_frame;
};

struct Embedding {
    std::vector<double> vec;  // 2H, concat of final forward/backward states
    std::string word;
};

// ---- graph-side parameter views -----------------------------------------

struct CellVars {
    ad::Node* wx = nullptr;
    ad::Node* wh = nullptr;
    ad::Node* b = nullptr;
};

/// Parameter leaves for graph building. Gradients accumulate in the leaves
/// across batches until zeroed; to_params() snapshots current values.
class EncoderVars {
public:
    static EncoderVars make(const EncoderParams& p);
    EncoderParams to_params() const;

    const EncoderConfig& config() const { return config_; }
    const std::vector<std::pair<CellVars, CellVars>>& layers() const { return layers_; }
    ad::Node* head_weights() const { return head_w_; }
    ad::Node* head_bias() const { return head_b_; }
    /// All parameter leaves in checkpoint order.
    const std::vector<ad::Node*>& all() const { return all_; }
    void zero_grads();

private:
    EncoderConfig config_;
    std::vector<std::pair<CellVars, CellVars>> layers_;
    ad::Node* head_w_ = nullptr;
    ad::Node* head_b_ = nullptr;
    std::vector<ad::Node*> all_;
    std::vector<std::unique_ptr<ad::Node>> owned_;
};

// ---- encoding ------------------------------------------------------------

enum class Direction { forward, backward };

/// One LSTM step. x is (D x N), h and c are (H x N); works for N = 1 and
/// batched columns alike. Returns (h, c).
std::pair<ad::Node*, ad::Node*> cell_step(ad::Tape& t, const CellVars& cell, ad::Node* x, ad::Node* h,
                                          ad::Node* c);

/// Runs one direction over per-frame columns (each D x N). Output element t
/// is the state after consuming frame t, regardless of direction. An
/// optional per-frame column mask freezes the state where the mask is 0
/// (padding). Zero initial state; empty input rejected.
std::vector<ad::Node*> run_direction(ad::Tape& t, const CellVars& cell,
                                     const std::vector<ad::Node*>& frames, Direction dir,
                                     const std::vector<std::vector<uint8_t>>* masks = nullptr);

/// Convenience value-level form over a (T x D) frame matrix; returns T x H.
Matrix run_direction_values(const LstmCellParams& cell, const Matrix& frames, Direction dir);

struct SeqEncodeOut {
    ad::Node* embedding = nullptr;    // 2H x 1
    std::vector<ad::Node*> lower;     // per frame, 2H x 1 (tap layer)
};

struct BatchEncodeOut {
    ad::Node* embeddings = nullptr;   // 2H x N
    std::vector<ad::Node*> lower;     // per frame, 2H x N (tap layer)
    std::vector<std::vector<int>> frame_valid;  // per frame: 1 if within length, else 0
};

/// Encodes one sequence given as a (T x D) matrix (row per frame).
SeqEncodeOut encode(ad::Tape& t, const EncoderVars& vars, const Matrix& frames);

/// Encodes a padded batch: frames_by_t[t] is (D x N) with zero columns past
/// each sequence's length. Per-sequence results equal unbatched encode.
BatchEncodeOut encode_batch(ad::Tape& t, const EncoderVars& vars, const std::vector<Matrix>& frames_by_t,
                            const std::vector<int>& lengths);

/// Value-level encode for evaluation paths.
std::pair<Embedding, FrameStates> encode_values(const EncoderParams& params, const Matrix& frames);

/// Embeds many sequences, batching internally. frames[i] is (T_i x D).
std::vector<std::vector<double>> embed_sequences(const EncoderParams& params,
                                                 const std::vector<const Matrix*>& frames,
                                                 int batch_size = 128);

// ---- checkpoint I/O --------------------------------------------------------

/// Binary checkpoint: magic "PATN", u32 version, config block, then every
/// matrix in declared order with explicit row/col headers (little-endian).
void save_checkpoint(const EncoderParams& params, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace patn
