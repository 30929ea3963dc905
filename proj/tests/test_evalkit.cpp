#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "patn/evalkit.hpp"
#include "patn/objectives.hpp"
#include "patn/rng.hpp"

using namespace patn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Corpus eval_corpus() {
    CorpusParams p;
    p.num_phones = 10;
    p.train_words = 6;
    p.train_instances_per_word = 4;
    p.dev_keywords = 2;
    p.test_keywords = 2;
    p.ood_keywords = 2;
    p.keyword_instances = 7;
    p.filler_words = 2;
    p.filler_instances = 5;
    p.ood_filler_words = 1;
    p.word_len_min = 3;
    p.word_len_max = 3;
    p.phone_duration_min = 14;
    p.phone_duration_max = 15;
    p.noise_stddev = 0.5;
    return generate_corpus(p, 7);
}

EncoderParams eval_model() {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 4;
    cfg.input_dim = 40;
    cfg.num_classes = 10;
    cfg.tap_layer = 1;
    return init_params(cfg, 9);
}

ScoredTrial trial(double score, bool target, const char* kw = "k") {
    ScoredTrial t;
    t.segment_index = 0;
    t.keyword = kw;
    t.score = score;
    t.is_target = target;
    return t;
}

/// Brute-force operating point: every distinct score as a threshold,
/// detection iff score <= threshold, linear interpolation at 1.0 FA/hr.
double brute_force_recall_at_1fa(const std::vector<ScoredTrial>& trials, double hours) {
    long targets = 0, non_targets = 0;
    for (const auto& t : trials) (t.is_target ? targets : non_targets) += 1;
    std::vector<double> thresholds = {-kInf};
    for (const auto& t : trials) thresholds.push_back(t.score);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(kInf);

    std::vector<std::pair<double, double>> points;  // (fa, recall), fa ascending
    for (double theta : thresholds) {
        long hit_t = 0, hit_n = 0;
        for (const auto& t : trials) {
            if (t.score <= theta) (t.is_target ? hit_t : hit_n) += 1;
        }
        points.emplace_back(static_cast<double>(hit_n) / hours,
                            static_cast<double>(hit_t) / targets);
    }
    size_t k = 0;
    for (size_t i = 0; i < points.size(); ++i)
        if (points[i].first <= 1.0) k = i;
    if (k + 1 < points.size() && points[k].first < 1.0) {
        const auto& [fa0, r0] = points[k];
        const auto& [fa1, r1] = points[k + 1];
        return r0 + (r1 - r0) * (1.0 - fa0) / (fa1 - fa0);
    }
    return points[k].second;
}

}  // namespace

TEST_CASE("enrollment selection: determinism, disjointness, minimum counts") {
    const Corpus corpus = eval_corpus();
    const auto keywords = split_keywords(corpus, "dev");
    REQUIRE(keywords.size() == 2);  // fillers have 5 instances, below the 6-instance floor

    const auto sel1 = select_enrollment(corpus, "dev", keywords[0], 42);
    const auto sel2 = select_enrollment(corpus, "dev", keywords[0], 42);
    const auto sel3 = select_enrollment(corpus, "dev", keywords[0], 43);
    CHECK(sel1 == sel2);
    CHECK(sel1 != sel3);
    CHECK(sel1.size() == 5);
    CHECK(std::set<int>(sel1.begin(), sel1.end()).size() == 5);
    for (int idx : sel1) CHECK(corpus.segments[idx].word == keywords[0]);

    CHECK_THROWS_WITH_AS(select_enrollment(corpus, "dev", "no_such_word", 1),
                         doctest::Contains("instances"), std::invalid_argument);

    // keyword with exactly 6 instances: 5 enrolled, 1 trial left
    Corpus six;
    six.feat_dim = 2;
    for (int i = 0; i < 6; ++i) {
        FeatureSequence s;
        s.id = i;
        s.word = "kw";
        s.split = "dev";
        s.num_frames = 40;
        s.frames.assign(80, 0.1f);
        s.labels.assign(40, 0);
        six.segments.push_back(s);
    }
    const auto enrolled = select_enrollment(six, "dev", "kw", 5);
    std::set<int> pool = {0, 1, 2, 3, 4, 5};
    for (int idx : enrolled) pool.erase(idx);
    CHECK(pool.size() == 1);
}

TEST_CASE("enroll embeds exactly the selected instances") {
    const Corpus corpus = eval_corpus();
    const EncoderParams params = eval_model();
    const auto keywords = split_keywords(corpus, "dev");
    const EnrollmentSet set = enroll(corpus, "dev", keywords[0], params, 11);
    CHECK(set.keyword == keywords[0]);
    REQUIRE(set.embeddings.size() == 5);
    CHECK(set.segment_indices == select_enrollment(corpus, "dev", keywords[0], 11));
    for (const auto& e : set.embeddings) CHECK(e.size() == 8);  // 2H
}

TEST_CASE("score_trials: degenerate and hand-computed cases") {
    Corpus corpus;
    corpus.feat_dim = 1;
    for (int i = 0; i < 4; ++i) {
        FeatureSequence s;
        s.id = i;
        s.word = i < 2 ? "ka" : "kb";
        s.split = "dev";
        s.num_frames = 40;
        s.frames.assign(40, 0.0f);
        s.labels.assign(40, 0);
        corpus.segments.push_back(s);
    }

    // all five enrollment embeddings equal v; a trial equal to v scores 0
    EnrollmentSet en;
    en.keyword = "ka";
    en.segment_indices = {0, 0, 0, 0, 0};
    en.embeddings.assign(5, {0.6, 0.8});
    auto scored = score_trials({en}, {0}, {{0.6, 0.8}}, corpus);
    REQUIRE(scored.size() == 1);
    CHECK(scored[0].score == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(scored[0].is_target);

    // trial orthogonal to every enrollment embedding scores 1
    scored = score_trials({en}, {2}, {{-0.8, 0.6}}, corpus);
    CHECK(scored[0].score == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(!scored[0].is_target);

    // two keywords, four trials, mixed enrollment embeddings: direct arithmetic
    EnrollmentSet ea;
    ea.keyword = "ka";
    ea.segment_indices = {0, 0, 0, 0, 0};
    ea.embeddings = {{1, 0}, {1, 0}, {0.6, 0.8}, {1, 0}, {0.6, 0.8}};
    EnrollmentSet eb;
    eb.keyword = "kb";
    eb.segment_indices = {2, 2, 2, 2, 2};
    eb.embeddings.assign(5, {0.0, 1.0});
    const std::vector<std::vector<double>> trial_embs = {{1, 0}, {0, 1}, {0.8, 0.6}, {-1, 0}};
    scored = score_trials({ea, eb}, {0, 1, 2, 3}, trial_embs, corpus);
    REQUIRE(scored.size() == 8);
    auto expect = [&](const std::vector<std::vector<double>>& enrolls, const std::vector<double>& t) {
        double s = 0.0;
        for (const auto& e : enrolls) s += cosine_distance(e, t);
        return s / 5.0;
    };
    for (int i = 0; i < 4; ++i) {
        CHECK(scored[i].score == doctest::Approx(expect(ea.embeddings, trial_embs[i])).epsilon(1e-12));
        CHECK(scored[4 + i].score ==
              doctest::Approx(expect(eb.embeddings, trial_embs[i])).epsilon(1e-12));
    }
    CHECK(scored[0].is_target);      // ka trial vs ka
    CHECK(!scored[4].is_target);     // ka trial vs kb
}

TEST_CASE("sweep: perfect separation reaches full recall at 1 FA/hr") {
    std::vector<ScoredTrial> trials;
    for (int i = 0; i < 10; ++i) trials.push_back(trial(0.1, true));
    for (int i = 0; i < 10; ++i) trials.push_back(trial(0.9, false));
    for (double hours : {0.01, 1.0, 100.0}) {
        const EvalReport report = sweep(trials, hours);
        CHECK(report.recall_at_1fa == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("sweep: tied scores give zero recall at zero false alarms") {
    std::vector<ScoredTrial> trials;
    for (int i = 0; i < 5; ++i) trials.push_back(trial(0.4, true));
    for (int i = 0; i < 5; ++i) trials.push_back(trial(0.4, false));
    const EvalReport report = sweep(trials, 0.5);
    // the -inf knot is the only zero-FA point, and it detects nothing
    CHECK(report.sweep.front().threshold == -kInf);
    CHECK(report.sweep.front().recall == 0.0);
    CHECK(report.sweep.front().fa_per_hour == 0.0);
    CHECK(report.sweep.back().recall == 1.0);
}

TEST_CASE("sweep endpoints and monotonicity") {
    Rng rng(61);
    std::vector<ScoredTrial> trials;
    for (int i = 0; i < 40; ++i) trials.push_back(trial(rng.uniform(0, 2), rng.uniform() < 0.4));
    if (std::none_of(trials.begin(), trials.end(), [](const ScoredTrial& t) { return t.is_target; }))
        trials.push_back(trial(0.3, true));
    const EvalReport report = sweep(trials, 0.02);
    CHECK(report.sweep.front().threshold == -kInf);
    CHECK(report.sweep.front().recall == 0.0);
    CHECK(report.sweep.front().fa_per_hour == 0.0);
    CHECK(report.sweep.back().threshold == kInf);
    CHECK(report.sweep.back().recall == 1.0);
    for (size_t i = 1; i < report.sweep.size(); ++i) {
        CHECK(report.sweep[i].recall >= report.sweep[i - 1].recall);
        CHECK(report.sweep[i].fa_per_hour >= report.sweep[i - 1].fa_per_hour);
    }
}

TEST_CASE("sweep matches the brute-force oracle on random trial sets") {
    Rng rng(62);
    for (int round = 0; round < 200; ++round) {
        std::vector<ScoredTrial> trials;
        const int n = 5 + rng.uniform_int(25);
        int targets = 0;
        for (int i = 0; i < n; ++i) {
            const bool is_target = rng.uniform() < 0.4;
            targets += is_target;
            // quantized scores force ties between trials
            const double score = std::round(rng.uniform(0, 2) * 8.0) / 8.0;
            trials.push_back(trial(score, is_target));
        }
        if (targets == 0) trials.push_back(trial(0.25, true));
        if (targets == n) trials.push_back(trial(0.75, false));
        const double hours = rng.uniform(0.005, 0.3);

        const EvalReport report = sweep(trials, hours);
        const double oracle = brute_force_recall_at_1fa(trials, hours);
        CHECK(report.recall_at_1fa == doctest::Approx(oracle).epsilon(1e-12));

        // knot-level equality: brute force at each distinct score reproduces
        // the (recall, fa) pair of the knot just above it
        std::vector<double> scores;
        for (const auto& t : trials) scores.push_back(t.score);
        std::sort(scores.begin(), scores.end());
        scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
        for (double s : scores) {
            long hit_t = 0, hit_n = 0, total_t = 0;
            for (const auto& t : trials) {
                total_t += t.is_target;
                if (t.score <= s) (t.is_target ? hit_t : hit_n) += 1;
            }
            const double want_recall = static_cast<double>(hit_t) / total_t;
            const double want_fa = static_cast<double>(hit_n) / hours;
            bool found = false;
            for (const auto& pt : report.sweep)
                found |= pt.recall == want_recall && pt.fa_per_hour == want_fa;
            CHECK(found);
        }
    }
}

TEST_CASE("sweep rejects degenerate inputs") {
    std::vector<ScoredTrial> only_targets = {trial(0.1, true), trial(0.2, true)};
    CHECK_THROWS_AS(sweep(only_targets, 1.0), std::invalid_argument);
    std::vector<ScoredTrial> mixed = {trial(0.1, true), trial(0.2, false)};
    CHECK_THROWS_AS(sweep(mixed, 0.0), std::invalid_argument);
}

TEST_CASE("evaluate_split: pools, hours, and scaling invariance") {
    const Corpus corpus = eval_corpus();
    const EncoderParams params = eval_model();
    const EvalOutcome outcome = evaluate_split(corpus, "dev", params, 77);

    REQUIRE(outcome.enrollments.size() == 2);
    std::set<int> enrolled;
    for (const auto& en : outcome.enrollments)
        enrolled.insert(en.segment_indices.begin(), en.segment_indices.end());
    double hours = 0.0;
    std::set<int> trial_segments;
    for (const auto& t : outcome.trials) {
        CHECK(!enrolled.count(t.segment_index));
        trial_segments.insert(t.segment_index);
    }
    for (int idx : trial_segments) hours += corpus.segments[idx].duration_seconds();
    CHECK(outcome.report.total_test_hours == doctest::Approx(hours / 3600.0).epsilon(1e-12));
    // every trial is scored against every keyword
    CHECK(outcome.trials.size() == trial_segments.size() * outcome.enrollments.size());
    CHECK(outcome.report.per_keyword_recall.size() == 2);

    // positive scaling of all embeddings leaves scores unchanged (cosine)
    auto scale_all = [&](double k) {
        std::vector<EnrollmentSet> scaled = outcome.enrollments;
        for (auto& en : scaled)
            for (auto& e : en.embeddings)
                for (double& x : e) x *= k;
        std::vector<int> segs;
        std::vector<std::vector<double>> embs;
        std::set<int> seen;
        for (const auto& t : outcome.trials) seen.insert(t.segment_index);
        // recompute trial embeddings through the public path
        std::vector<Matrix> frames;
        std::vector<const Matrix*> ptrs;
        for (int idx : seen) {
            segs.push_back(idx);
            frames.push_back(corpus.segments[idx].frames_matrix(corpus.feat_dim));
        }
        for (const Matrix& m : frames) ptrs.push_back(&m);
        embs = embed_sequences(params, ptrs);
        for (auto& e : embs)
            for (double& x : e) x *= k;
        return score_trials(scaled, segs, embs, corpus);
    };
    const auto base = scale_all(1.0);
    const auto scaled = scale_all(3.7);
    REQUIRE(base.size() == scaled.size());
    for (size_t i = 0; i < base.size(); ++i)
        CHECK(base[i].score == doctest::Approx(scaled[i].score).epsilon(1e-9));
}

TEST_CASE("project2d: planar data, duplicates, eigenvalue oracle") {
    // points lying in a fixed 2D plane of a 5D space reconstruct exactly
    Rng rng(81);
    std::vector<double> u = {0.5, 0.5, 0.5, 0.5, 0.0}, v = {0.5, -0.5, 0.5, -0.5, 0.0};
    std::vector<std::vector<double>> points;
    std::vector<std::string> words;
    for (int i = 0; i < 12; ++i) {
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        std::vector<double> p(5);
        for (int k = 0; k < 5; ++k) p[k] = a * u[k] + b * v[k];
        points.push_back(p);
        words.push_back("w");
    }
    const auto projected = project2d(points, words);
    // reconstruction: distance between centered points must be preserved
    auto dist2d = [&](int i, int j) {
        const double dx = projected[i].x - projected[j].x, dy = projected[i].y - projected[j].y;
        return std::sqrt(dx * dx + dy * dy);
    };
    auto dist5d = [&](int i, int j) {
        double s = 0.0;
        for (int k = 0; k < 5; ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
        return std::sqrt(s);
    };
    for (int i = 0; i < 12; ++i)
        for (int j = i + 1; j < 12; ++j) CHECK(dist2d(i, j) == doctest::Approx(dist5d(i, j)).epsilon(1e-6));

    // duplicated point set projects to identical coordinates
    std::vector<std::vector<double>> dup = points;
    dup.insert(dup.end(), points.begin(), points.end());
    std::vector<std::string> dup_words(24, "w");
    const auto dup_proj = project2d(dup, dup_words);
    for (int i = 0; i < 12; ++i) {
        CHECK(dup_proj[i].x == doctest::Approx(dup_proj[12 + i].x).epsilon(1e-9));
        CHECK(dup_proj[i].y == doctest::Approx(dup_proj[12 + i].y).epsilon(1e-9));
    }

    CHECK_THROWS_AS(project2d({{1.0, 2.0}, {2.0, 1.0}}, {"a", "b"}), std::invalid_argument);
}

TEST_CASE("project2d eigenvalues match a Jacobi diagonalization oracle") {
    // five fixed points in 4D
    const std::vector<std::vector<double>> pts = {{1.0, 0.2, -0.5, 0.0},
                                                  {-0.4, 1.1, 0.3, -0.2},
                                                  {0.7, -0.9, 0.1, 0.5},
                                                  {-1.2, 0.4, 0.8, -0.6},
                                                  {0.3, 0.3, -1.0, 0.9}};
    const auto [l1, l2] = project2d_eigenvalues(pts);

    // oracle: explicit covariance and cyclic Jacobi rotations
    const size_t n = pts.size(), d = 4;
    std::vector<double> mean(d, 0.0);
    for (const auto& p : pts)
        for (size_t k = 0; k < d; ++k) mean[k] += p[k] / n;
    double cov[4][4] = {};
    for (const auto& p : pts)
        for (size_t a = 0; a < d; ++a)
            for (size_t b = 0; b < d; ++b) cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
    for (int sweep_i = 0; sweep_i < 100; ++sweep_i) {
        for (size_t p = 0; p < d; ++p) {
            for (size_t q = p + 1; q < d; ++q) {
                if (std::fabs(cov[p][q]) < 1e-14) continue;
                const double phi = 0.5 * std::atan2(2.0 * cov[p][q], cov[q][q] - cov[p][p]);
                const double c = std::cos(phi), s = std::sin(phi);
                for (size_t k = 0; k < d; ++k) {
                    const double akp = cov[k][p], akq = cov[k][q];
                    cov[k][p] = c * akp - s * akq;
                    cov[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < d; ++k) {
                    const double apk = cov[p][k], aqk = cov[q][k];
                    cov[p][k] = c * apk - s * aqk;
                    cov[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eigs = {cov[0][0], cov[1][1], cov[2][2], cov[3][3]};
    std::sort(eigs.rbegin(), eigs.rend());
    CHECK(l1 == doctest::Approx(eigs[0]).epsilon(1e-7));
    CHECK(l2 == doctest::Approx(eigs[1]).epsilon(1e-7));
}

TEST_CASE("project2d zero-fills missing components on rank-deficient input") {
    // collinear points: only one principal direction carries variance
    std::vector<std::vector<double>> pts;
    std::vector<std::string> words;
    for (int i = 0; i < 5; ++i) {
        pts.push_back({1.0 * i, 2.0 * i, -1.0 * i});
        words.push_back("w");
    }
    const auto projected = project2d(pts, words);
    for (const auto& p : projected) CHECK(p.y == doctest::Approx(0.0).epsilon(1e-9));
    const auto [l1, l2] = project2d_eigenvalues(pts);
    CHECK(l1 > 0.0);
    CHECK(l2 == doctest::Approx(0.0).epsilon(1e-9));
}
