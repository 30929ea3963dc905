#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "patn/corpus.hpp"
#include "patn/encoder.hpp"

namespace patn {

constexpr int kEnrollmentQueries = 5;

struct EnrollmentSet {
    std::string keyword;
    std::vector<int> segment_indices;                // exactly 5, distinct instances
    std::vector<std::vector<double>> embeddings;     // parallel to segment_indices
};

struct ScoredTrial {
    int segment_index = -1;
    std::string keyword;
    double score = 0.0;  // averaged cosine distance to the 5 enrollment embeddings
    bool is_target = false;
};

struct SweepPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double fa_per_hour = 0.0;
};

struct EvalReport {
    std::vector<SweepPoint> sweep;  // thresholds ascending, -inf and +inf included
    double recall_at_1fa = 0.0;     // interpolated operating point
    double operating_threshold = 0.0;  // largest knot with fa/hr <= 1.0
    double total_test_hours = 0.0;
    std::map<std::string, double> per_keyword_recall;  // at operating_threshold
};

/// Keywords of a split: words with enough instances to enroll 5 queries and
/// leave at least one trial.
std::vector<std::string> split_keywords(const Corpus& corpus, const std::string& split);

/// Deterministic choice of 5 enrollment instances for one keyword.
std::vector<int> select_enrollment(const Corpus& corpus, const std::string& split,
                                   const std::string& keyword, uint64_t seed);

/// Spec-shaped enrollment: selects 5 instances and embeds them.
EnrollmentSet enroll(const Corpus& corpus, const std::string& split, const std::string& keyword,
                     const EncoderParams& params, uint64_t seed);

/// Scores every trial against every enrollment set.
std::vector<ScoredTrial> score_trials(const std::vector<EnrollmentSet>& enrollments,
                                      const std::vector<int>& trial_segments,
                                      const std::vector<std::vector<double>>& trial_embeddings,
                                      const Corpus& corpus);

/// Threshold sweep over all distinct-score midpoints plus +-infinity.
/// Detection accepts score <= threshold; ties count as accepted.
EvalReport sweep(const std::vector<ScoredTrial>& trials, double total_test_hours);

struct EvalOutcome {
    std::vector<EnrollmentSet> enrollments;
    std::vector<ScoredTrial> trials;
    EvalReport report;
};

/// Full protocol on one split: enroll every keyword, remove enrolled
/// segments from the trial pool, score, sweep.
EvalOutcome evaluate_split(const Corpus& corpus, const std::string& split, const EncoderParams& params,
                           uint64_t enroll_seed);

// ---- 2D projection ---------------------------------------------------------

struct ProjectedPoint {
    double x = 0.0;
    double y = 0.0;
    std::string word;
};

/// Mean-centered projection onto the top-2 principal directions (power
/// iteration with deflation, tolerance 1e-9). Deterministic up to sign;
/// rank-deficient inputs zero-fill the missing component.
std::vector<ProjectedPoint> project2d(const std::vector<std::vector<double>>& embeddings,
                                      const std::vector<std::string>& words);

/// Top-2 eigenvalues found during projection (variance captured), exposed
/// for verification.
std::pair<double, double> project2d_eigenvalues(const std::vector<std::vector<double>>& embeddings);

// ---- report I/O --------------------------------------------------------------

void write_eval_report_json(const EvalReport& report, const std::string& path);
void write_sweep_csv(const EvalReport& report, const std::string& path);
void write_projection_csv(const std::vector<ProjectedPoint>& points, const std::string& path);

}  // namespace patn
