#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "patn/corpus.hpp"
#include "patn/encoder.hpp"
#include "patn/objectives.hpp"
#include "patn/optim.hpp"

namespace patn {

/// One document holding every module's knobs. Unknown keys are rejected;
/// absent keys fall back to these defaults.
struct RunConfig {
    EncoderConfig model;  // layers=2, hidden=128, input_dim=40, num_classes=48, tap_layer=1
    LossConfig loss;
    AdamHyper optimizer;
    double grad_clip_norm = 0.0;  // 0 disables clipping

    int epochs = 40;
    int batch_size = 128;
    int num_triplets = 10000;

    CorpusParams corpus;
    bool type_uniform_triplets = false;

    uint64_t seed_init = 1;
    uint64_t seed_shuffle = 2;
    uint64_t seed_data = 3;
    uint64_t seed_enroll = 4;

    std::string corpus_path;      // base path of the two-file corpus
    std::string checkpoint_path;

    void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Reads and validates a config file; empty path returns the defaults.
RunConfig load_config(const std::string& path);

/// Writes the effective merged config to <out_dir>/config.echo.json.
void write_config_echo(const RunConfig& cfg, const std::string& out_dir);

}  // namespace patn
