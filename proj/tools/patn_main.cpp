#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patn/commands.hpp"

namespace {

std::string pick_path(const std::string& positional, const std::string& from_config,
                      const char* config_key) {
    if (!positional.empty()) return positional;
    if (!from_config.empty()) return from_config;
    throw std::runtime_error(std::string("missing path: pass it as an argument or set '") + config_key +
                             "' in the config");
}

std::vector<double> parse_lambdas(const std::string& csv) {
    std::vector<double> out;
    size_t start = 0;
    while (start <= csv.size()) {
        const size_t comma = csv.find(',', start);
        const std::string tok = csv.substr(start, comma == std::string::npos ? csv.size() - start
                                                                             : comma - start);
        if (!tok.empty()) out.push_back(std::stod(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phonetically associated triplet network: synthetic-corpus training and evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::string corpus_base, checkpoint, split = "dev", lambdas_csv = "0,0.1,0.3,0.5,1";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--out", out_dir, "output directory");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
    train->add_option("corpus", corpus_base, "corpus base path (without .jsonl/.feats)");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval->add_option("checkpoint", checkpoint, "model checkpoint");
    eval->add_option("corpus", corpus_base, "corpus base path");
    eval->add_option("split", split, "split name (dev, test_id, test_ood)");
    add_common(eval);

    CLI::App* sweep = app.add_subcommand("sweep-lambda", "train one model per lambda, evaluate on dev");
    sweep->add_option("corpus", corpus_base, "corpus base path");
    sweep->add_option("--lambdas", lambdas_csv, "comma-separated lambda values in [0,1]");
    add_common(sweep);

    CLI::App* project = app.add_subcommand("project", "export a 2D projection of split embeddings");
    project->add_option("checkpoint", checkpoint, "model checkpoint");
    project->add_option("corpus", corpus_base, "corpus base path");
    project->add_option("split", split, "split name");
    add_common(project);

    CLI11_PARSE(app, argc, argv);

    try {
        const patn::RunConfig cfg = patn::load_config(config_path);
        if (gen->parsed()) {
            patn::cmd_gen(cfg, out_dir);
        } else if (train->parsed()) {
            patn::cmd_train(cfg, pick_path(corpus_base, cfg.corpus_path, "paths.corpus"), out_dir);
        } else if (eval->parsed()) {
            patn::cmd_eval(cfg, pick_path(checkpoint, cfg.checkpoint_path, "paths.checkpoint"),
                           pick_path(corpus_base, cfg.corpus_path, "paths.corpus"), split, out_dir);
        } else if (sweep->parsed()) {
            patn::cmd_sweep_lambda(cfg, pick_path(corpus_base, cfg.corpus_path, "paths.corpus"),
                                   parse_lambdas(lambdas_csv), out_dir);
        } else if (project->parsed()) {
            patn::cmd_project(cfg, pick_path(checkpoint, cfg.checkpoint_path, "paths.checkpoint"),
                              pick_path(corpus_base, cfg.corpus_path, "paths.corpus"), split, out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "patn: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
