#include "patn/config.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

namespace patn {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

void apply_section(const json& j, const std::string& prefix,
                   const std::map<std::string, Setter>& setters) {
    if (!j.is_object())
        throw std::invalid_argument("config: '" + prefix + "' must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("config: unknown key '" + prefix + "." + key + "'");
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + prefix + "." + key +
                                        "': " + e.what());
        }
    }
}

template <typename T>
Setter set(T& field) {
    return [&field](const json& v) { field = v.get<T>(); };
}

}  // namespace

void RunConfig::validate() const {
    loss.validate();
    corpus.validate();
    if (model.layers < 1 || model.hidden < 1 || model.input_dim < 1 || model.num_classes < 1)
        throw std::invalid_argument("config: model dimensions must be positive");
    if (model.tap_layer < 1 || model.tap_layer > model.layers)
        throw std::invalid_argument("config: model.tap_layer outside [1, model.layers]");
    if (epochs < 1) throw std::invalid_argument("config: schedule.epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: schedule.batch_size must be >= 1");
    if (num_triplets < 1) throw std::invalid_argument("config: schedule.num_triplets must be >= 1");
    if (optimizer.learning_rate <= 0.0)
        throw std::invalid_argument("config: optimizer.learning_rate must be positive");
    if (grad_clip_norm < 0.0)
        throw std::invalid_argument("config: optimizer.grad_clip_norm must be >= 0");
    if (model.input_dim != corpus.feat_dim)
        throw std::invalid_argument("config: model.input_dim != corpus.feat_dim");
    if (model.num_classes < corpus.num_phones * corpus.states_per_phone)
        throw std::invalid_argument("config: model.num_classes below corpus label count " +
                                    std::to_string(corpus.num_phones * corpus.states_per_phone));
}

RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    std::string policy = to_string(cfg.loss.ce_branch_policy);

    const std::map<std::string, Setter> top = {
        {"model",
         [&](const json& s) {
             apply_section(s, "model",
                           {{"layers", set(cfg.model.layers)},
                            {"hidden", set(cfg.model.hidden)},
                            {"input_dim", set(cfg.model.input_dim)},
                            {"num_classes", set(cfg.model.num_classes)},
                            {"tap_layer", set(cfg.model.tap_layer)}});
         }},
        {"loss",
         [&](const json& s) {
             apply_section(s, "loss",
                           {{"margin", set(cfg.loss.margin)},
                            {"lambda", set(cfg.loss.lambda)},
                            {"ce_branch_policy", set(policy)}});
         }},
        {"optimizer",
         [&](const json& s) {
             apply_section(s, "optimizer",
                           {{"learning_rate", set(cfg.optimizer.learning_rate)},
                            {"beta1", set(cfg.optimizer.beta1)},
                            {"beta2", set(cfg.optimizer.beta2)},
                            {"epsilon", set(cfg.optimizer.epsilon)},
                            {"grad_clip_norm", set(cfg.grad_clip_norm)}});
         }},
        {"schedule",
         [&](const json& s) {
             apply_section(s, "schedule",
                           {{"epochs", set(cfg.epochs)},
                            {"batch_size", set(cfg.batch_size)},
                            {"num_triplets", set(cfg.num_triplets)}});
         }},
        {"corpus",
         [&](const json& s) {
             apply_section(
                 s, "corpus",
                 {{"num_phones", set(cfg.corpus.num_phones)},
                  {"states_per_phone", set(cfg.corpus.states_per_phone)},
                  {"feat_dim", set(cfg.corpus.feat_dim)},
                  {"train_words", set(cfg.corpus.train_words)},
                  {"train_instances_per_word", set(cfg.corpus.train_instances_per_word)},
                  {"dev_keywords", set(cfg.corpus.dev_keywords)},
                  {"test_keywords", set(cfg.corpus.test_keywords)},
                  {"ood_keywords", set(cfg.corpus.ood_keywords)},
                  {"keyword_instances", set(cfg.corpus.keyword_instances)},
                  {"filler_words", set(cfg.corpus.filler_words)},
                  {"filler_instances", set(cfg.corpus.filler_instances)},
                  {"ood_filler_words", set(cfg.corpus.ood_filler_words)},
                  {"word_len_min", set(cfg.corpus.word_len_min)},
                  {"word_len_max", set(cfg.corpus.word_len_max)},
                  {"phone_duration_min", set(cfg.corpus.phone_duration_min)},
                  {"phone_duration_max", set(cfg.corpus.phone_duration_max)},
                  {"duration_jitter", set(cfg.corpus.duration_jitter)},
                  {"noise_stddev", set(cfg.corpus.noise_stddev)},
                  {"emission_mean_scale", set(cfg.corpus.emission_mean_scale)},
                  {"min_mean_distance", set(cfg.corpus.min_mean_distance)},
                  {"confusable_fraction", set(cfg.corpus.confusable_fraction)},
                  {"type_uniform_triplets", set(cfg.type_uniform_triplets)}});
         }},
        {"seeds",
         [&](const json& s) {
             apply_section(s, "seeds",
                           {{"init", set(cfg.seed_init)},
                            {"shuffle", set(cfg.seed_shuffle)},
                            {"data", set(cfg.seed_data)},
                            {"enroll", set(cfg.seed_enroll)}});
         }},
        {"paths",
         [&](const json& s) {
             apply_section(s, "paths",
                           {{"corpus", set(cfg.corpus_path)},
                            {"checkpoint", set(cfg.checkpoint_path)}});
         }},
    };

    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        auto it = top.find(key);
        if (it == top.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
        it->second(value);
    }
    cfg.loss.ce_branch_policy = ce_policy_from_string(policy);
    cfg.validate();
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    return json{
        {"model",
         {{"layers", cfg.model.layers},
          {"hidden", cfg.model.hidden},
          {"input_dim", cfg.model.input_dim},
          {"num_classes", cfg.model.num_classes},
          {"tap_layer", cfg.model.tap_layer}}},
        {"loss",
         {{"margin", cfg.loss.margin},
          {"lambda", cfg.loss.lambda},
          {"ce_branch_policy", to_string(cfg.loss.ce_branch_policy)}}},
        {"optimizer",
         {{"learning_rate", cfg.optimizer.learning_rate},
          {"beta1", cfg.optimizer.beta1},
          {"beta2", cfg.optimizer.beta2},
          {"epsilon", cfg.optimizer.epsilon},
          {"grad_clip_norm", cfg.grad_clip_norm}}},
        {"schedule",
         {{"epochs", cfg.epochs}, {"batch_size", cfg.batch_size}, {"num_triplets", cfg.num_triplets}}},
        {"corpus",
         {{"num_phones", cfg.corpus.num_phones},
          {"states_per_phone", cfg.corpus.states_per_phone},
          {"feat_dim", cfg.corpus.feat_dim},
          {"train_words", cfg.corpus.train_words},
          {"train_instances_per_word", cfg.corpus.train_instances_per_word},
          {"dev_keywords", cfg.corpus.dev_keywords},
          {"test_keywords", cfg.corpus.test_keywords},
          {"ood_keywords", cfg.corpus.ood_keywords},
          {"keyword_instances", cfg.corpus.keyword_instances},
          {"filler_words", cfg.corpus.filler_words},
          {"filler_instances", cfg.corpus.filler_instances},
          {"ood_filler_words", cfg.corpus.ood_filler_words},
          {"word_len_min", cfg.corpus.word_len_min},
          {"word_len_max", cfg.corpus.word_len_max},
          {"phone_duration_min", cfg.corpus.phone_duration_min},
          {"phone_duration_max", cfg.corpus.phone_duration_max},
          {"duration_jitter", cfg.corpus.duration_jitter},
          {"noise_stddev", cfg.corpus.noise_stddev},
          {"emission_mean_scale", cfg.corpus.emission_mean_scale},
          {"min_mean_distance", cfg.corpus.min_mean_distance},
          {"confusable_fraction", cfg.corpus.confusable_fraction},
          {"type_uniform_triplets", cfg.type_uniform_triplets}}},
        {"seeds",
         {{"init", cfg.seed_init},
          {"shuffle", cfg.seed_shuffle},
          {"data", cfg.seed_data},
          {"enroll", cfg.seed_enroll}}},
        {"paths", {{"corpus", cfg.corpus_path}, {"checkpoint", cfg.checkpoint_path}}},
    };
}

RunConfig load_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void write_config_echo(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/config.echo.json";
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace patn
