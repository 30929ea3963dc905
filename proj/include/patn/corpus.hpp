#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "patn/matrix.hpp"

namespace patn {

constexpr double kFrameHopSeconds = 0.0125;  // 25 ms windows, 50% overlap
constexpr int kMinSegmentFrames = 40;        // 0.5 s minimum word duration

/// Emission model: one mean/stddev pair per phone state. With
/// states_per_phone = 1 the frame-label classes are the phones themselves;
/// 3 states per phone yields a larger, triphone-like label space.
struct PhoneInventory {
    int num_phones = 48;
    int states_per_phone = 1;
    int feat_dim = 40;
    std::vector<std::vector<double>> state_means;    // num_classes() entries
    std::vector<std::vector<double>> state_stddevs;  // diagonal, same layout

    int num_classes() const { return num_phones * states_per_phone; }
};

/// word id -> phone sequence. Kept ordered so iteration is deterministic.
struct Lexicon {
    std::map<std::string, std::vector<int>> words;
};

struct FeatureSequence {
    int id = 0;
    std::string word;
    std::string split;           // train / dev / test_id / test_ood
    int num_frames = 0;          // T
    std::vector<float> frames;   // T x feat_dim row-major (float32, matches disk)
    std::vector<int> labels;     // per-frame phone-state ids, length T

    double duration_seconds() const { return num_frames * kFrameHopSeconds; }
    Matrix frames_matrix(int feat_dim) const;
};

/// Indices into Corpus::segments.
struct Triplet {
    int anchor = -1;
    int same = -1;
    int different = -1;
};

struct Corpus {
    int feat_dim = 40;
    std::vector<FeatureSequence> segments;

    std::vector<int> split_indices(const std::string& split) const;
    /// word -> segment indices within one split.
    std::map<std::string, std::vector<int>> instances_by_word(const std::string& split) const;
    double split_hours(const std::string& split) const;
};

struct CorpusParams {
    int num_phones = 48;
    int states_per_phone = 1;
    int feat_dim = 40;

    int train_words = 30;
    int train_instances_per_word = 40;
    int dev_keywords = 8;
    int test_keywords = 8;
    int ood_keywords = 12;
    int keyword_instances = 12;  // 5 enrollment + trials
    int filler_words = 10;
    int filler_instances = 5;    // < 6 so fillers never become keywords
    int ood_filler_words = 8;

    int word_len_min = 3;  // phones per word, within the 2..8 scheme
    int word_len_max = 5;
    int phone_duration_min = 14;  // frames
    int phone_duration_max = 19;
    double duration_jitter = 1.0;   // 0 = fixed durations, 1 = full range
    double noise_stddev = 1.0;      // scales the per-state emission stddev
    double emission_mean_scale = 0.35;
    double min_mean_distance = 0.5;
    double confusable_fraction = 0.5;  // words minted as 1-phone edits of others

    void validate() const;
};

PhoneInventory make_inventory(const CorpusParams& params, uint64_t seed);

/// Train-role and out-of-domain lexicons. OOD phone sequences are disjoint
/// from every training sequence (shared phone inventory, disjoint identities).
struct LexiconPair {
    Lexicon train;  // word ids w### — also used for dev/test_id instances
    Lexicon ood;    // word ids ood###
};
LexiconPair make_lexicons(const CorpusParams& params, const PhoneInventory& inventory, uint64_t seed);

/// Synthesizes one word instance: per-phone durations jittered around the
/// configured range, frames emitted as state mean + scaled Gaussian noise.
FeatureSequence synth_segment(const PhoneInventory& inventory, const std::vector<int>& phones,
                              const CorpusParams& params, uint64_t seed);

/// Full synthetic corpus with train/dev/test_id/test_ood splits.
/// Deterministic per seed; every instance draws from its own derived stream
/// so generation could be parallelized per word without changing output.
Corpus generate_corpus(const CorpusParams& params, uint64_t seed);

/// Uniform random valid triplets from the train split. With
/// type_uniform = false the anchor is drawn per token, otherwise per word.
std::vector<Triplet> sample_triplets(const Corpus& corpus, int count, uint64_t seed,
                                     bool type_uniform = false);

/// One padded triplet batch; columns are [anchors | sames | differents].
struct TripletBatch {
    int num_triplets = 0;
    std::vector<int> lengths;                // 3B
    std::vector<Matrix> frames_by_t;         // per frame: feat_dim x 3B, zero-padded
    std::vector<std::vector<int>> labels;    // per frame: 3B entries, -1 past length
};

/// Shuffles [0, count) with the given seed and cuts it into batch_size
/// chunks; the last partial chunk is kept.
std::vector<std::vector<int>> plan_batches(size_t count, int batch_size, uint64_t seed);

TripletBatch assemble_batch(const Corpus& corpus, const std::vector<Triplet>& triplets,
                            const std::vector<int>& picks);

std::vector<TripletBatch> make_batches(const Corpus& corpus, const std::vector<Triplet>& triplets,
                                       int batch_size, uint64_t shuffle_seed);

/// Two-file corpus format rooted at `base_path`: <base>.jsonl metadata and
/// <base>.feats raw little-endian float32 features.
void save_corpus(const Corpus& corpus, const std::string& base_path);
Corpus load_corpus(const std::string& base_path);

}  // namespace patn
