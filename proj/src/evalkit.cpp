#include "patn/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "patn/objectives.hpp"
#include "patn/rng.hpp"

namespace patn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

std::vector<std::string> split_keywords(const Corpus& corpus, const std::string& split) {
    std::vector<std::string> out;
    for (const auto& [word, idx] : corpus.instances_by_word(split))
        if (static_cast<int>(idx.size()) >= kEnrollmentQueries + 1) out.push_back(word);
    return out;
}

std::vector<int> select_enrollment(const Corpus& corpus, const std::string& split,
                                   const std::string& keyword, uint64_t seed) {
    auto by_word = corpus.instances_by_word(split);
    auto it = by_word.find(keyword);
    const int have = it == by_word.end() ? 0 : static_cast<int>(it->second.size());
    if (have < kEnrollmentQueries + 1)
        throw std::invalid_argument("enroll: keyword '" + keyword + "' has " + std::to_string(have) +
                                    " instances in split '" + split + "', need at least " +
                                    std::to_string(kEnrollmentQueries + 1));
    std::vector<int> pool = it->second;
    Rng rng(mix_seed(seed, fnv1a(keyword)));
    rng.shuffle(pool);
    pool.resize(kEnrollmentQueries);
    std::sort(pool.begin(), pool.end());
    return pool;
}

EnrollmentSet enroll(const Corpus& corpus, const std::string& split, const std::string& keyword,
                     const EncoderParams& params, uint64_t seed) {
    EnrollmentSet set;
    set.keyword = keyword;
    set.segment_indices = select_enrollment(corpus, split, keyword, seed);
    std::vector<Matrix> frames;
    std::vector<const Matrix*> ptrs;
    for (int idx : set.segment_indices)
        frames.push_back(corpus.segments[idx].frames_matrix(corpus.feat_dim));
    for (const Matrix& m : frames) ptrs.push_back(&m);
    set.embeddings = embed_sequences(params, ptrs);
    return set;
}

std::vector<ScoredTrial> score_trials(const std::vector<EnrollmentSet>& enrollments,
                                      const std::vector<int>& trial_segments,
                                      const std::vector<std::vector<double>>& trial_embeddings,
                                      const Corpus& corpus) {
    if (trial_segments.size() != trial_embeddings.size())
        throw std::invalid_argument("score_trials: trial/embedding count mismatch");
    std::vector<ScoredTrial> out;
    out.reserve(enrollments.size() * trial_segments.size());
    for (const auto& en : enrollments) {
        for (size_t i = 0; i < trial_segments.size(); ++i) {
            ScoredTrial trial;
            trial.segment_index = trial_segments[i];
            trial.keyword = en.keyword;
            double sum = 0.0;
            for (const auto& e : en.embeddings) sum += cosine_distance(e, trial_embeddings[i]);
            trial.score = sum / static_cast<double>(en.embeddings.size());
            trial.is_target = corpus.segments[trial.segment_index].word == en.keyword;
            out.push_back(std::move(trial));
        }
    }
    return out;
}

EvalReport sweep(const std::vector<ScoredTrial>& trials, double total_test_hours) {
    if (total_test_hours <= 0.0) throw std::invalid_argument("sweep: total test hours must be positive");
    long targets = 0, non_targets = 0;
    for (const auto& tr : trials) (tr.is_target ? targets : non_targets) += 1;
    if (targets == 0 || non_targets == 0)
        throw std::invalid_argument("sweep: need at least one target and one non-target trial");

    std::vector<const ScoredTrial*> order;
    order.reserve(trials.size());
    for (const auto& tr : trials) order.push_back(&tr);
    std::sort(order.begin(), order.end(),
              [](const ScoredTrial* a, const ScoredTrial* b) { return a->score < b->score; });

    // knot thresholds: -inf, midpoints between adjacent distinct scores, +inf
    std::vector<double> knots = {-kInf};
    for (size_t i = 1; i < order.size(); ++i) {
        const double a = order[i - 1]->score, b = order[i]->score;
        if (a < b) knots.push_back(a + 0.5 * (b - a));
    }
    knots.push_back(kInf);

    EvalReport report;
    report.total_test_hours = total_test_hours;
    size_t pos = 0;
    long hit_targets = 0, hit_non_targets = 0;
    for (double theta : knots) {
        while (pos < order.size() && order[pos]->score <= theta) {
            (order[pos]->is_target ? hit_targets : hit_non_targets) += 1;
            ++pos;
        }
        SweepPoint pt;
        pt.threshold = theta;
        pt.recall = static_cast<double>(hit_targets) / static_cast<double>(targets);
        pt.fa_per_hour = static_cast<double>(hit_non_targets) / total_test_hours;
        report.sweep.push_back(pt);
    }

    // operating point: recall at the largest threshold with fa/hr <= 1.0,
    // interpolating when 1.0 falls strictly between adjacent knots
    size_t k = 0;
    for (size_t i = 0; i < report.sweep.size(); ++i)
        if (report.sweep[i].fa_per_hour <= 1.0) k = i;
    const SweepPoint& at = report.sweep[k];
    report.operating_threshold = at.threshold;
    if (k + 1 < report.sweep.size() && at.fa_per_hour < 1.0) {
        const SweepPoint& next = report.sweep[k + 1];
        report.recall_at_1fa =
            at.recall + (next.recall - at.recall) * (1.0 - at.fa_per_hour) /
                            (next.fa_per_hour - at.fa_per_hour);
    } else {
        report.recall_at_1fa = at.recall;
    }

    // per-keyword recall at the operating knot
    std::map<std::string, std::pair<long, long>> counts;  // keyword -> (hits, total)
    for (const auto& tr : trials) {
        if (!tr.is_target) continue;
        auto& [hits, total] = counts[tr.keyword];
        total += 1;
        if (tr.score <= report.operating_threshold) hits += 1;
    }
    for (const auto& [word, hits_total] : counts)
        report.per_keyword_recall[word] =
            static_cast<double>(hits_total.first) / static_cast<double>(hits_total.second);
    return report;
}

EvalOutcome evaluate_split(const Corpus& corpus, const std::string& split, const EncoderParams& params,
                           uint64_t enroll_seed) {
    const std::vector<std::string> keywords = split_keywords(corpus, split);
    if (keywords.empty())
        throw std::invalid_argument("evaluate_split: no keyword in split '" + split + "' has " +
                                    std::to_string(kEnrollmentQueries + 1) + "+ instances");

    std::set<int> enrolled;
    std::vector<std::vector<int>> selections;
    for (const auto& kw : keywords) {
        selections.push_back(select_enrollment(corpus, split, kw, enroll_seed));
        enrolled.insert(selections.back().begin(), selections.back().end());
    }
    std::vector<int> trial_pool;
    for (int idx : corpus.split_indices(split))
        if (!enrolled.count(idx)) trial_pool.push_back(idx);

    // embed everything in this split once
    std::vector<int> all_segments = corpus.split_indices(split);
    std::vector<Matrix> frames;
    frames.reserve(all_segments.size());
    for (int idx : all_segments) frames.push_back(corpus.segments[idx].frames_matrix(corpus.feat_dim));
    std::vector<const Matrix*> ptrs;
    for (const Matrix& m : frames) ptrs.push_back(&m);
    const auto embeddings = embed_sequences(params, ptrs);
    std::map<int, size_t> row_of;
    for (size_t i = 0; i < all_segments.size(); ++i) row_of[all_segments[i]] = i;

    EvalOutcome out;
    for (size_t i = 0; i < keywords.size(); ++i) {
        EnrollmentSet set;
        set.keyword = keywords[i];
        set.segment_indices = selections[i];
        for (int idx : selections[i]) set.embeddings.push_back(embeddings[row_of[idx]]);
        out.enrollments.push_back(std::move(set));
    }
    std::vector<std::vector<double>> trial_embeddings;
    for (int idx : trial_pool) trial_embeddings.push_back(embeddings[row_of[idx]]);
    out.trials = score_trials(out.enrollments, trial_pool, trial_embeddings, corpus);

    double hours = 0.0;
    for (int idx : trial_pool) hours += corpus.segments[idx].duration_seconds();
    hours /= 3600.0;
    out.report = sweep(out.trials, hours);
    return out;
}

// ---- 2D projection --------------------------------------------------------------

namespace {

struct Pca2 {
    std::vector<double> v1, v2;
    double lambda1 = 0.0, lambda2 = 0.0;
    std::vector<std::vector<double>> centered;
};

Pca2 top2_directions(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.size() < 3)
        throw std::invalid_argument("project2d: need at least 3 embeddings, got " +
                                    std::to_string(embeddings.size()));
    const size_t n = embeddings.size(), d = embeddings[0].size();
    for (const auto& e : embeddings)
        if (e.size() != d) throw std::invalid_argument("project2d: inconsistent embedding dims");

    Pca2 out;
    std::vector<double> mean(d, 0.0);
    for (const auto& e : embeddings)
        for (size_t k = 0; k < d; ++k) mean[k] += e[k];
    for (double& m : mean) m /= static_cast<double>(n);
    out.centered.assign(n, std::vector<double>(d));
    for (size_t i = 0; i < n; ++i)
        for (size_t k = 0; k < d; ++k) out.centered[i][k] = embeddings[i][k] - mean[k];

    // covariance (1/n convention)
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& x : out.centered)
        for (size_t a = 0; a < d; ++a)
            for (size_t b = 0; b < d; ++b) cov[a][b] += x[a] * x[b];
    for (auto& row : cov)
        for (double& v : row) v /= static_cast<double>(n);

    auto power_iterate = [&](std::vector<double>& vec) {
        Rng rng(0x9a7e);  // fixed start; deterministic up to sign
        for (double& x : vec) x = rng.uniform(-1.0, 1.0);
        double norm = 0.0;
        for (double x : vec) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : vec) x /= norm;
        double lambda = 0.0;
        for (int iter = 0; iter < 10000; ++iter) {
            std::vector<double> next(d, 0.0);
            for (size_t a = 0; a < d; ++a)
                for (size_t b = 0; b < d; ++b) next[a] += cov[a][b] * vec[b];
            double next_norm = 0.0;
            for (double x : next) next_norm += x * x;
            next_norm = std::sqrt(next_norm);
            if (next_norm < 1e-15) {  // rank deficient: no variance left
                std::fill(vec.begin(), vec.end(), 0.0);
                return 0.0;
            }
            double delta = 0.0;
            for (size_t a = 0; a < d; ++a) {
                next[a] /= next_norm;
                delta = std::max(delta, std::fabs(std::fabs(next[a]) - std::fabs(vec[a])));
            }
            vec = std::move(next);
            lambda = next_norm;
            if (delta < 1e-9) break;
        }
        return lambda;
    };

    out.v1.assign(d, 0.0);
    out.lambda1 = power_iterate(out.v1);
    // deflate and repeat
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) cov[a][b] -= out.lambda1 * out.v1[a] * out.v1[b];
    out.v2.assign(d, 0.0);
    out.lambda2 = power_iterate(out.v2);
    return out;
}

}  // namespace

std::vector<ProjectedPoint> project2d(const std::vector<std::vector<double>>& embeddings,
                                      const std::vector<std::string>& words) {
    if (embeddings.size() != words.size())
        throw std::invalid_argument("project2d: embeddings/words count mismatch");
    Pca2 pca = top2_directions(embeddings);
    std::vector<ProjectedPoint> out(embeddings.size());
    for (size_t i = 0; i < embeddings.size(); ++i) {
        double x = 0.0, y = 0.0;
        for (size_t k = 0; k < pca.centered[i].size(); ++k) {
            x += pca.centered[i][k] * pca.v1[k];
            y += pca.centered[i][k] * pca.v2[k];
        }
        out[i] = {x, y, words[i]};
    }
    return out;
}

std::pair<double, double> project2d_eigenvalues(const std::vector<std::vector<double>>& embeddings) {
    Pca2 pca = top2_directions(embeddings);
    return {pca.lambda1, pca.lambda2};
}

// ---- report I/O ------------------------------------------------------------------

namespace {

std::string threshold_str(double v) {
    if (v == kInf) return "inf";
    if (v == -kInf) return "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_eval_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["recall_at_1fa_per_hour"] = report.recall_at_1fa;
    j["operating_threshold"] = threshold_str(report.operating_threshold);
    j["total_test_hours"] = report.total_test_hours;
    j["per_keyword_recall"] = report.per_keyword_recall;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_eval_report_json: cannot open " + path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_eval_report_json: write failed for " + path);
}

void write_sweep_csv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    os << "threshold,recall,fa_per_hour\n";
    os.precision(17);
    for (const auto& pt : report.sweep)
        os << threshold_str(pt.threshold) << "," << pt.recall << "," << pt.fa_per_hour << "\n";
    if (!os) throw std::runtime_error("write_sweep_csv: write failed for " + path);
}

void write_projection_csv(const std::vector<ProjectedPoint>& points, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_projection_csv: cannot open " + path);
    os << "x,y,word\n";
    os.precision(17);
    for (const auto& p : points) os << p.x << "," << p.y << "," << p.word << "\n";
    if (!os) throw std::runtime_error("write_projection_csv: write failed for " + path);
}

}  // namespace patn
