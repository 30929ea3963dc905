#include "patn/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "patn/rng.hpp"

namespace patn {

using nlohmann::json;

Matrix FeatureSequence::frames_matrix(int feat_dim) const {
    Matrix m(num_frames, feat_dim);
    for (size_t i = 0; i < frames.size(); ++i) m[i] = static_cast<double>(frames[i]);
    return m;
}

std::vector<int> Corpus::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < segments.size(); ++i)
        if (segments[i].split == split) out.push_back(static_cast<int>(i));
    return out;
}

std::map<std::string, std::vector<int>> Corpus::instances_by_word(const std::string& split) const {
    std::map<std::string, std::vector<int>> out;
    for (size_t i = 0; i < segments.size(); ++i)
        if (segments[i].split == split) out[segments[i].word].push_back(static_cast<int>(i));
    return out;
}

double Corpus::split_hours(const std::string& split) const {
    double seconds = 0.0;
    for (const auto& s : segments)
        if (s.split == split) seconds += s.duration_seconds();
    return seconds / 3600.0;
}

void CorpusParams::validate() const {
    if (num_phones < 2) throw std::invalid_argument("corpus.num_phones must be >= 2");
    if (states_per_phone < 1) throw std::invalid_argument("corpus.states_per_phone must be >= 1");
    if (feat_dim < 1) throw std::invalid_argument("corpus.feat_dim must be >= 1");
    if (word_len_min < 2 || word_len_max > 8 || word_len_min > word_len_max)
        throw std::invalid_argument("corpus word lengths must satisfy 2 <= min <= max <= 8");
    if (phone_duration_min < 1 || phone_duration_min > phone_duration_max)
        throw std::invalid_argument("corpus phone durations must satisfy 1 <= min <= max");
    if (duration_jitter < 0.0 || duration_jitter > 1.0)
        throw std::invalid_argument("corpus.duration_jitter must be in [0, 1]");
    if (noise_stddev < 0.0) throw std::invalid_argument("corpus.noise_stddev must be >= 0");
    if (confusable_fraction < 0.0 || confusable_fraction > 1.0)
        throw std::invalid_argument("corpus.confusable_fraction must be in [0, 1]");
    if (train_words < 2) throw std::invalid_argument("corpus.train_words must be >= 2");
    if (keyword_instances < 6)
        throw std::invalid_argument("corpus.keyword_instances must be >= 6 (5 enrollment + 1 trial)");
    if (dev_keywords + test_keywords > train_words)
        throw std::invalid_argument("corpus: dev_keywords + test_keywords exceed train_words");
}

PhoneInventory make_inventory(const CorpusParams& params, uint64_t seed) {
    params.validate();
    PhoneInventory inv;
    inv.num_phones = params.num_phones;
    inv.states_per_phone = params.states_per_phone;
    inv.feat_dim = params.feat_dim;
    Rng rng(mix_seed(seed, 0x1117));
    const int classes = inv.num_classes();
    inv.state_means.reserve(classes);
    for (int s = 0; s < classes; ++s) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000)
                throw std::runtime_error("make_inventory: cannot satisfy min_mean_distance " +
                                         std::to_string(params.min_mean_distance));
            std::vector<double> mean(params.feat_dim);
            for (double& x : mean) x = params.emission_mean_scale * rng.gauss();
            bool ok = true;
            for (const auto& other : inv.state_means) {
                double d2 = 0.0;
                for (int k = 0; k < params.feat_dim; ++k)
                    d2 += (mean[k] - other[k]) * (mean[k] - other[k]);
                if (std::sqrt(d2) <= params.min_mean_distance) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                inv.state_means.push_back(std::move(mean));
                break;
            }
        }
    }
    for (int s = 0; s < classes; ++s) {
        std::vector<double> sd(params.feat_dim);
        for (double& x : sd) x = rng.uniform(0.7, 1.3);
        inv.state_stddevs.push_back(std::move(sd));
    }
    return inv;
}

namespace {

std::string word_name(const char* prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
    return buf;
}

// No adjacent repeats: equal neighbours would merge label runs and the word
// would no longer decode to its phone sequence.
std::vector<int> random_word(Rng& rng, const CorpusParams& p) {
    const int len = p.word_len_min + rng.uniform_int(p.word_len_max - p.word_len_min + 1);
    std::vector<int> phones(len);
    for (int i = 0; i < len; ++i) {
        int ph;
        do {
            ph = rng.uniform_int(p.num_phones);
        } while (i > 0 && ph == phones[i - 1]);
        phones[i] = ph;
    }
    return phones;
}

std::vector<int> mutate_word(Rng& rng, const CorpusParams& p, const std::vector<int>& base) {
    std::vector<int> out = base;
    const int pos = rng.uniform_int(static_cast<int>(out.size()));
    int ph;
    do {
        ph = rng.uniform_int(p.num_phones);
    } while (ph == out[pos] || (pos > 0 && ph == out[pos - 1]) ||
             (pos + 1 < static_cast<int>(out.size()) && ph == out[pos + 1]));
    out[pos] = ph;
    return out;
}

void fill_lexicon(Lexicon& lex, Rng& rng, const CorpusParams& p, const char* prefix, int count,
                  std::set<std::vector<int>>& taken) {
    std::vector<std::vector<int>> made;
    for (int i = 0; i < count; ++i) {
        std::vector<int> phones;
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw std::runtime_error("lexicon: cannot generate distinct words");
            const bool confuse = !made.empty() && rng.uniform() < p.confusable_fraction;
            phones = confuse ? mutate_word(rng, p, made[rng.uniform_int(static_cast<int>(made.size()))])
                             : random_word(rng, p);
            if (!taken.count(phones)) break;
        }
        taken.insert(phones);
        made.push_back(phones);
        lex.words[word_name(prefix, i)] = phones;
    }
}

}  // namespace

LexiconPair make_lexicons(const CorpusParams& params, const PhoneInventory& inventory, uint64_t seed) {
    params.validate();
    (void)inventory;
    LexiconPair out;
    std::set<std::vector<int>> taken;
    Rng train_rng(mix_seed(seed, 0x2227));
    fill_lexicon(out.train, train_rng, params, "w", params.train_words, taken);
    Rng ood_rng(mix_seed(seed, 0x3337));
    fill_lexicon(out.ood, ood_rng, params, "ood", params.ood_keywords + params.ood_filler_words, taken);
    return out;
}

FeatureSequence synth_segment(const PhoneInventory& inventory, const std::vector<int>& phones,
                              const CorpusParams& params, uint64_t seed) {
    Rng rng(seed);
    const double center = 0.5 * (params.phone_duration_min + params.phone_duration_max);
    const double half = 0.5 * (params.phone_duration_max - params.phone_duration_min);

    FeatureSequence seq;
    for (int phone : phones) {
        if (phone < 0 || phone >= inventory.num_phones)
            throw std::invalid_argument("synth_segment: phone id out of range");
        const double u = 2.0 * rng.uniform() - 1.0;
        int duration = static_cast<int>(std::lround(center + half * params.duration_jitter * u));
        duration = std::clamp(duration, params.phone_duration_min, params.phone_duration_max);
        // split the phone run across its states, first states take the remainder
        const int s_count = inventory.states_per_phone;
        for (int s = 0; s < s_count; ++s) {
            int frames_here = duration / s_count + (s < duration % s_count ? 1 : 0);
            const int state_id = phone * s_count + s;
            const auto& mean = inventory.state_means[state_id];
            const auto& sd = inventory.state_stddevs[state_id];
            for (int f = 0; f < frames_here; ++f) {
                for (int k = 0; k < inventory.feat_dim; ++k) {
                    const double v = mean[k] + params.noise_stddev * sd[k] * rng.gauss();
                    seq.frames.push_back(static_cast<float>(v));
                }
                seq.labels.push_back(state_id);
            }
        }
    }
    seq.num_frames = static_cast<int>(seq.labels.size());
    return seq;
}

namespace {

void check_word_duration(const std::string& word, const std::vector<int>& phones,
                         const CorpusParams& p) {
    const double center = 0.5 * (p.phone_duration_min + p.phone_duration_max);
    const double half = 0.5 * (p.phone_duration_max - p.phone_duration_min);
    const int min_per_phone = std::max(
        p.phone_duration_min, static_cast<int>(std::lround(center - half * p.duration_jitter)) - 1);
    if (static_cast<int>(phones.size()) * min_per_phone < kMinSegmentFrames)
        throw std::invalid_argument("corpus: word '" + word + "' can fall below " +
                                    std::to_string(kMinSegmentFrames) + " frames (0.5 s minimum)");
}

constexpr uint64_t kSplitSalt[4] = {101, 202, 303, 404};  // train, dev, test_id, test_ood

}  // namespace

Corpus generate_corpus(const CorpusParams& params, uint64_t seed) {
    params.validate();
    const PhoneInventory inventory = make_inventory(params, seed);
    const LexiconPair lex = make_lexicons(params, inventory, seed);

    for (const auto& [word, phones] : lex.train.words) check_word_duration(word, phones, params);
    for (const auto& [word, phones] : lex.ood.words) check_word_duration(word, phones, params);

    Corpus corpus;
    corpus.feat_dim = params.feat_dim;

    std::vector<std::string> train_names;
    for (const auto& [w, _] : lex.train.words) train_names.push_back(w);
    std::vector<std::string> ood_names;
    for (const auto& [w, _] : lex.ood.words) ood_names.push_back(w);

    int next_id = 0;
    auto emit = [&](const std::string& split, int split_idx, const Lexicon& lexicon,
                    const std::string& word, int word_idx, int instances) {
        for (int i = 0; i < instances; ++i) {
            const uint64_t s =
                mix_seed(mix_seed(mix_seed(seed, kSplitSalt[split_idx]), static_cast<uint64_t>(word_idx)),
                         static_cast<uint64_t>(i));
            FeatureSequence seq = synth_segment(inventory, lexicon.words.at(word), params, s);
            seq.id = next_id++;
            seq.word = word;
            seq.split = split;
            corpus.segments.push_back(std::move(seq));
        }
    };

    for (int w = 0; w < params.train_words; ++w)
        emit("train", 0, lex.train, train_names[w], w, params.train_instances_per_word);

    // dev keywords: first block of train words; test_id keywords: next block;
    // fillers: last filler_words train words, fresh instances per split.
    for (int k = 0; k < params.dev_keywords; ++k)
        emit("dev", 1, lex.train, train_names[k], k, params.keyword_instances);
    for (int f = 0; f < params.filler_words; ++f) {
        const int w = params.train_words - params.filler_words + f;
        emit("dev", 1, lex.train, train_names[w], w, params.filler_instances);
    }
    for (int k = 0; k < params.test_keywords; ++k) {
        const int w = params.dev_keywords + k;
        emit("test_id", 2, lex.train, train_names[w], w, params.keyword_instances);
    }
    for (int f = 0; f < params.filler_words; ++f) {
        const int w = params.train_words - params.filler_words + f;
        emit("test_id", 2, lex.train, train_names[w], w, params.filler_instances);
    }
    for (int k = 0; k < params.ood_keywords; ++k)
        emit("test_ood", 3, lex.ood, ood_names[k], k, params.keyword_instances);
    for (int f = 0; f < params.ood_filler_words; ++f) {
        const int w = params.ood_keywords + f;
        emit("test_ood", 3, lex.ood, ood_names[w], w, params.filler_instances);
    }
    return corpus;
}

std::vector<Triplet> sample_triplets(const Corpus& corpus, int count, uint64_t seed, bool type_uniform) {
    const auto by_word = corpus.instances_by_word("train");
    std::vector<std::string> words;
    std::vector<const std::vector<int>*> instances;
    std::vector<int> anchor_tokens;  // segment indices whose word has >= 2 instances
    size_t train_total = 0;
    for (const auto& [w, idx] : by_word) {
        words.push_back(w);
        instances.push_back(&idx);
        train_total += idx.size();
        if (idx.size() >= 2)
            for (int i : idx) anchor_tokens.push_back(i);
    }
    if (anchor_tokens.empty() || words.size() < 2)
        throw std::invalid_argument(
            "sample_triplets: need a word with 2+ instances and 2+ distinct words");

    std::map<std::string, int> word_pos;
    for (size_t i = 0; i < words.size(); ++i) word_pos[words[i]] = static_cast<int>(i);

    Rng rng(mix_seed(seed, 0x7417));
    std::vector<Triplet> out;
    out.reserve(count);
    while (static_cast<int>(out.size()) < count) {
        Triplet tr;
        int word_idx;
        if (type_uniform) {
            do {
                word_idx = rng.uniform_int(static_cast<int>(words.size()));
            } while (instances[word_idx]->size() < 2);
            tr.anchor = (*instances[word_idx])[rng.uniform_int(static_cast<int>(instances[word_idx]->size()))];
        } else {
            tr.anchor = anchor_tokens[rng.uniform_int(static_cast<int>(anchor_tokens.size()))];
            word_idx = word_pos[corpus.segments[tr.anchor].word];
        }
        const auto& same_pool = *instances[word_idx];
        do {
            tr.same = same_pool[rng.uniform_int(static_cast<int>(same_pool.size()))];
        } while (tr.same == tr.anchor);
        do {
            const int other = rng.uniform_int(static_cast<int>(words.size()));
            if (other == word_idx || instances[other]->empty()) continue;
            tr.different = (*instances[other])[rng.uniform_int(static_cast<int>(instances[other]->size()))];
        } while (tr.different < 0);
        out.push_back(tr);
    }
    return out;
}

std::vector<std::vector<int>> plan_batches(size_t count, int batch_size, uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("plan_batches: batch_size must be >= 1");
    std::vector<int> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (size_t start = 0; start < count; start += batch_size) {
        const size_t end = std::min(count, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

TripletBatch assemble_batch(const Corpus& corpus, const std::vector<Triplet>& triplets,
                            const std::vector<int>& picks) {
    TripletBatch batch;
    batch.num_triplets = static_cast<int>(picks.size());
    const int n = 3 * batch.num_triplets;
    std::vector<const FeatureSequence*> seqs(n);
    for (int j = 0; j < batch.num_triplets; ++j) {
        const Triplet& tr = triplets[picks[j]];
        seqs[j] = &corpus.segments[tr.anchor];
        seqs[batch.num_triplets + j] = &corpus.segments[tr.same];
        seqs[2 * batch.num_triplets + j] = &corpus.segments[tr.different];
    }
    int t_max = 0;
    batch.lengths.resize(n);
    for (int i = 0; i < n; ++i) {
        batch.lengths[i] = seqs[i]->num_frames;
        t_max = std::max(t_max, batch.lengths[i]);
    }
    const int d = corpus.feat_dim;
    batch.frames_by_t.assign(t_max, Matrix(d, n));
    batch.labels.assign(t_max, std::vector<int>(n, -1));
    for (int i = 0; i < n; ++i) {
        for (int ti = 0; ti < batch.lengths[i]; ++ti) {
            for (int k = 0; k < d; ++k)
                batch.frames_by_t[ti].at(k, i) = static_cast<double>(seqs[i]->frames[static_cast<size_t>(ti) * d + k]);
            batch.labels[ti][i] = seqs[i]->labels[ti];
        }
    }
    return batch;
}

std::vector<TripletBatch> make_batches(const Corpus& corpus, const std::vector<Triplet>& triplets,
                                       int batch_size, uint64_t shuffle_seed) {
    std::vector<TripletBatch> out;
    for (const auto& picks : plan_batches(triplets.size(), batch_size, shuffle_seed))
        out.push_back(assemble_batch(corpus, triplets, picks));
    return out;
}

// ---- serialization -----------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "corpus feature file I/O assumes a little-endian host");

constexpr const char* kCorpusMagic = "PATN-CORPUS";
constexpr int kCorpusVersion = 1;

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& base_path) {
    std::ofstream meta(base_path + ".jsonl");
    if (!meta) throw std::runtime_error("save_corpus: cannot open " + base_path + ".jsonl");
    std::ofstream feats(base_path + ".feats", std::ios::binary);
    if (!feats) throw std::runtime_error("save_corpus: cannot open " + base_path + ".feats");

    json header = {{"magic", kCorpusMagic},
                   {"version", kCorpusVersion},
                   {"feat_dim", corpus.feat_dim},
                   {"frame_hop_seconds", kFrameHopSeconds}};
    meta << header.dump() << "\n";

    uint64_t offset = 0;
    for (const auto& seg : corpus.segments) {
        json rec = {{"id", seg.id},           {"word", seg.word},
                    {"split", seg.split},     {"num_frames", seg.num_frames},
                    {"labels", seg.labels},   {"offset_bytes", offset}};
        meta << rec.dump() << "\n";
        feats.write(reinterpret_cast<const char*>(seg.frames.data()),
                    static_cast<std::streamsize>(seg.frames.size() * sizeof(float)));
        offset += seg.frames.size() * sizeof(float);
    }
    if (!meta || !feats) throw std::runtime_error("save_corpus: write failed under " + base_path);
}

Corpus load_corpus(const std::string& base_path) {
    std::ifstream meta(base_path + ".jsonl");
    if (!meta) throw std::runtime_error("load_corpus: cannot open " + base_path + ".jsonl");
    std::ifstream feats(base_path + ".feats", std::ios::binary);
    if (!feats) throw std::runtime_error("load_corpus: cannot open " + base_path + ".feats");
    const uint64_t feats_size = std::filesystem::file_size(base_path + ".feats");

    std::string line;
    if (!std::getline(meta, line)) throw std::runtime_error("load_corpus: empty metadata file");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("load_corpus: bad header: ") + e.what());
    }
    if (header.value("magic", "") != kCorpusMagic)
        throw std::runtime_error("load_corpus: bad magic in " + base_path + ".jsonl");
    if (header.value("version", -1) != kCorpusVersion)
        throw std::runtime_error("load_corpus: unsupported version");

    Corpus corpus;
    corpus.feat_dim = header.value("feat_dim", 0);
    if (corpus.feat_dim < 1) throw std::runtime_error("load_corpus: bad feat_dim in header");

    size_t line_no = 1;
    while (std::getline(meta, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
        FeatureSequence seg;
        seg.id = rec.at("id").get<int>();
        seg.word = rec.at("word").get<std::string>();
        seg.split = rec.at("split").get<std::string>();
        seg.num_frames = rec.at("num_frames").get<int>();
        seg.labels = rec.at("labels").get<std::vector<int>>();
        const uint64_t offset = rec.at("offset_bytes").get<uint64_t>();
        if (seg.num_frames < 1 || static_cast<int>(seg.labels.size()) != seg.num_frames)
            throw std::runtime_error("load_corpus: line " + std::to_string(line_no) +
                                     ": labels inconsistent with num_frames");
        const uint64_t bytes = static_cast<uint64_t>(seg.num_frames) * corpus.feat_dim * sizeof(float);
        if (offset + bytes > feats_size)
            throw std::runtime_error("load_corpus: segment at offset " + std::to_string(offset) +
                                     " overruns feature file (size " + std::to_string(feats_size) + ")");
        seg.frames.resize(static_cast<size_t>(seg.num_frames) * corpus.feat_dim);
        feats.seekg(static_cast<std::streamoff>(offset));
        if (!feats.read(reinterpret_cast<char*>(seg.frames.data()), static_cast<std::streamsize>(bytes)))
            throw std::runtime_error("load_corpus: truncated feature file at offset " +
                                     std::to_string(offset));
        corpus.segments.push_back(std::move(seg));
    }
    return corpus;
}

}  // namespace patn
