#include "patn/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "patn/evalkit.hpp"
#include "patn/rng.hpp"

namespace patn {

namespace fs = std::filesystem;

namespace {

void check_corpus_against_model(const RunConfig& cfg, const Corpus& corpus) {
    if (corpus.feat_dim != cfg.model.input_dim)
        throw std::runtime_error("corpus feat_dim " + std::to_string(corpus.feat_dim) +
                                 " != model.input_dim " + std::to_string(cfg.model.input_dim));
    int max_label = -1;
    for (const auto& seg : corpus.segments)
        for (int y : seg.labels) max_label = std::max(max_label, y);
    if (max_label >= cfg.model.num_classes)
        throw std::runtime_error("corpus label " + std::to_string(max_label) +
                                 " exceeds model.num_classes " + std::to_string(cfg.model.num_classes));
}

TrainResult run_training(const RunConfig& cfg, const Corpus& corpus, bool quiet = false) {
    check_corpus_against_model(cfg, corpus);
    const auto triplets =
        sample_triplets(corpus, cfg.num_triplets, cfg.seed_data, cfg.type_uniform_triplets);
    const EncoderParams initial = init_params(cfg.model, cfg.seed_init);
    TrainSchedule schedule{cfg.epochs, cfg.batch_size, cfg.seed_shuffle};
    auto on_epoch = [&](const EpochStats& e) {
        if (quiet) return;
        std::printf("epoch %3d  total %.6f  triplet %.6f  ce %.6f  active %.3f\n", e.epoch, e.total,
                    e.triplet_term, e.ce_term, e.active_fraction);
        std::fflush(stdout);
    };
    return train(corpus, triplets, initial, cfg.loss, schedule, cfg.optimizer, cfg.grad_clip_norm,
                 on_epoch);
}

std::string format_lambda(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

void cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);
    Corpus corpus = generate_corpus(cfg.corpus, cfg.seed_data);
    save_corpus(corpus, out_dir + "/corpus");
    for (const std::string split : {"train", "dev", "test_id", "test_ood"}) {
        const auto idx = corpus.split_indices(split);
        std::printf("split %-8s  %4zu segments  %.4f hours\n", split.c_str(), idx.size(),
                    corpus.split_hours(split));
    }
    std::printf("corpus written to %s/corpus.{jsonl,feats}\n", out_dir.c_str());
}

void cmd_train(const RunConfig& cfg, const std::string& corpus_base, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);
    const Corpus corpus = load_corpus(corpus_base);
    TrainResult result = run_training(cfg, corpus);
    save_checkpoint(result.params, out_dir + "/checkpoint.patn");
    write_loss_log(out_dir + "/loss.csv", result.log);
    std::printf("checkpoint written to %s/checkpoint.patn\n", out_dir.c_str());
}

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& corpus_base,
              const std::string& split, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);
    const Corpus corpus = load_corpus(corpus_base);
    const EncoderParams params = load_checkpoint(checkpoint);
    EvalOutcome outcome = evaluate_split(corpus, split, params, cfg.seed_enroll);
    write_eval_report_json(outcome.report, out_dir + "/eval_" + split + ".json");
    write_sweep_csv(outcome.report, out_dir + "/sweep_" + split + ".csv");
    std::printf("split %s: recall %.4f @ 1.0 FA/hr over %.4f hours (%zu keywords)\n", split.c_str(),
                outcome.report.recall_at_1fa, outcome.report.total_test_hours,
                outcome.enrollments.size());
}

void cmd_sweep_lambda(const RunConfig& cfg, const std::string& corpus_base,
                      const std::vector<double>& lambdas, const std::string& out_dir) {
    if (lambdas.empty()) throw std::invalid_argument("sweep-lambda: empty lambda list");
    for (double v : lambdas)
        if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("sweep-lambda: lambda " + format_lambda(v) + " outside [0, 1]");
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);
    const Corpus corpus = load_corpus(corpus_base);

    std::ofstream csv(out_dir + "/lambda_sweep.csv");
    if (!csv) throw std::runtime_error("sweep-lambda: cannot open " + out_dir + "/lambda_sweep.csv");
    csv << "lambda,dev_recall_at_1fa_per_hour\n";
    csv.precision(17);
    for (double lambda : lambdas) {
        RunConfig run = cfg;  // one independently trained model per lambda, shared seeds
        run.loss.lambda = lambda;
        const std::string sub = out_dir + "/lambda_" + format_lambda(lambda);
        fs::create_directories(sub);
        TrainResult result = run_training(run, corpus);
        save_checkpoint(result.params, sub + "/checkpoint.patn");
        write_loss_log(sub + "/loss.csv", result.log);
        EvalOutcome outcome = evaluate_split(corpus, "dev", result.params, run.seed_enroll);
        write_eval_report_json(outcome.report, sub + "/eval_dev.json");
        write_sweep_csv(outcome.report, sub + "/sweep_dev.csv");
        csv << format_lambda(lambda) << "," << outcome.report.recall_at_1fa << "\n";
        std::printf("lambda %-6s  dev recall %.4f @ 1.0 FA/hr\n", format_lambda(lambda).c_str(),
                    outcome.report.recall_at_1fa);
    }
    if (!csv) throw std::runtime_error("sweep-lambda: write failed");
}

void cmd_project(const RunConfig& cfg, const std::string& checkpoint, const std::string& corpus_base,
                 const std::string& split, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_echo(cfg, out_dir);
    const Corpus corpus = load_corpus(corpus_base);
    const EncoderParams params = load_checkpoint(checkpoint);
    const auto indices = corpus.split_indices(split);
    if (indices.empty()) throw std::runtime_error("project: split '" + split + "' is empty");
    std::vector<Matrix> frames;
    std::vector<const Matrix*> ptrs;
    std::vector<std::string> words;
    frames.reserve(indices.size());
    for (int idx : indices) {
        frames.push_back(corpus.segments[idx].frames_matrix(corpus.feat_dim));
        words.push_back(corpus.segments[idx].word);
    }
    for (const Matrix& m : frames) ptrs.push_back(&m);
    const auto embeddings = embed_sequences(params, ptrs);
    const auto points = project2d(embeddings, words);
    write_projection_csv(points, out_dir + "/projection_" + split + ".csv");
    std::printf("projected %zu embeddings to %s/projection_%s.csv\n", points.size(), out_dir.c_str(),
                split.c_str());
}

}  // namespace patn
