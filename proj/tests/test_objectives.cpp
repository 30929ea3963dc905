#include <doctest.h>

#include <cmath>
#include <vector>

#include "patn/objectives.hpp"
#include "patn/optim.hpp"
#include "patn/rng.hpp"

using namespace patn;
using ad::Node;
using ad::Tape;

namespace {

Matrix colvec(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Matrix::from_rows(n, 1, std::move(v));
}

double cosd(Tape& t, std::vector<double> a, std::vector<double> b) {
    return cosine_distance(t, t.input(colvec(std::move(a))), t.input(colvec(std::move(b))))
        ->value.at(0, 0);
}

struct TinyBatch {
    std::vector<Matrix> frames_by_t;             // D x 3B per frame
    std::vector<int> lengths;                    // 3B
    std::vector<std::vector<int>> labels;        // per frame
};

/// Random padded batch of `b` triplets for a model with input dim d.
TinyBatch random_batch(Rng& rng, int b, int d, int classes, int t_min, int t_max) {
    TinyBatch batch;
    const int n = 3 * b;
    batch.lengths.resize(n);
    int longest = 0;
    for (int i = 0; i < n; ++i) {
        batch.lengths[i] = t_min + rng.uniform_int(t_max - t_min + 1);
        longest = std::max(longest, batch.lengths[i]);
    }
    batch.frames_by_t.assign(longest, Matrix(d, n));
    batch.labels.assign(longest, std::vector<int>(n, -1));
    for (int i = 0; i < n; ++i) {
        for (int ti = 0; ti < batch.lengths[i]; ++ti) {
            for (int k = 0; k < d; ++k) batch.frames_by_t[ti].at(k, i) = rng.uniform(-1, 1);
            batch.labels[ti][i] = rng.uniform_int(classes);
        }
    }
    return batch;
}

EncoderConfig tiny_config(int hidden = 2, int d = 3, int classes = 3) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.hidden = hidden;
    cfg.input_dim = d;
    cfg.num_classes = classes;
    cfg.tap_layer = 1;
    return cfg;
}

}  // namespace

TEST_CASE("cosine distance endpoint values") {
    Tape t;
    CHECK(cosd(t, {0.3, -1.2, 0.5}, {0.3, -1.2, 0.5}) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(cosd(t, {0.3, -1.2, 0.5}, {-0.3, 1.2, -0.5}) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(cosd(t, {1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cosine distance: symmetry, range, scaling invariance") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(5), b(5);
        for (double& x : a) x = rng.uniform(-2, 2);
        for (double& x : b) x = rng.uniform(-2, 2);
        Tape t;
        const double ab = cosd(t, a, b);
        const double ba = cosd(t, b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= 2.0 + 1e-12);
        std::vector<double> a_scaled = a;
        for (double& x : a_scaled) x *= 7.25;
        CHECK(cosd(t, a_scaled, b) == doctest::Approx(ab).epsilon(1e-9));
    }
}

TEST_CASE("cosine distance guards zero-norm input") {
    const long before = zero_norm_guard_count();
    Tape t;
    const double d = cosd(t, {0.0, 0.0, 0.0}, {1.0, 2.0, 3.0});
    CHECK(std::isfinite(d));
    CHECK(zero_norm_guard_count() > before);
    // value-level variant takes the same guard
    const std::vector<double> z(3, 0.0), v{1.0, 2.0, 3.0};
    CHECK(std::isfinite(cosine_distance(z, v)));
}

TEST_CASE("cosine distance gradient vs finite differences") {
    Rng rng(32);
    auto a = ad::make_leaf(colvec({0.4, -0.7, 1.1, 0.2}));
    auto b = ad::make_leaf(colvec({-0.3, 0.9, 0.5, -1.0}));
    auto build = [&](Tape& t) { return cosine_distance(t, a.get(), b.get()); };
    Tape t;
    t.backward(build(t));
    Node* params[] = {a.get(), b.get()};
    auto f = [&]() {
        Tape tt;
        return build(tt)->value.at(0, 0);
    };
    CHECK(ad::gradcheck(f, params) < 1e-6);
}

TEST_CASE("triplet loss margin cases") {
    // unit vectors with cos = 0.8 (d+ = 0.2) and cos = 0.1 (d- = 0.9)
    Tape t;
    Node* anchor = t.input(colvec({1.0, 0.0}));
    Node* same1 = t.input(colvec({0.8, 0.6}));
    Node* diff1 = t.input(colvec({0.1, std::sqrt(1.0 - 0.01)}));
    CHECK(triplet_loss(t, anchor, same1, diff1, 0.5)->value.at(0, 0) == 0.0);  // hinge inactive

    // d+ = 0.4, d- = 0.5 with margin 0.5 -> 0.4
    Node* same2 = t.input(colvec({0.6, 0.8}));
    Node* diff2 = t.input(colvec({0.5, std::sqrt(0.75)}));
    CHECK(triplet_loss(t, anchor, same2, diff2, 0.5)->value.at(0, 0) ==
          doctest::Approx(0.4).epsilon(1e-12));

    // identical triple: loss is exactly the margin
    Node* v = t.input(colvec({0.2, -1.3, 0.7}));
    CHECK(triplet_loss(t, v, v, v, 0.5)->value.at(0, 0) == 0.5);
    CHECK(triplet_loss(t, v, v, v, 0.0)->value.at(0, 0) == 0.0);
}

TEST_CASE("triplet loss is non-negative with zero gradient when inactive") {
    Rng rng(33);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(4), s(4), d(4);
        for (double& x : a) x = rng.uniform(-1, 1);
        for (double& x : s) x = rng.uniform(-1, 1);
        for (double& x : d) x = rng.uniform(-1, 1);
        auto la = ad::make_leaf(colvec(a));
        Tape t;
        Node* loss = triplet_loss(t, la.get(), t.input(colvec(s)), t.input(colvec(d)),
                                  rng.uniform(0.0, 2.0));
        CHECK(loss->value.at(0, 0) >= 0.0);
        if (loss->value.at(0, 0) == 0.0) {
            t.backward(loss);
            for (size_t i = 0; i < la->grad.size(); ++i) CHECK(la->grad[i] == 0.0);
        }
    }
}

TEST_CASE("frame cross entropy closed forms") {
    // zero head, C = 4: uniform logits give ln 4 regardless of labels
    auto w0 = ad::make_leaf(Matrix(4, 3));
    auto b0 = ad::make_leaf(Matrix(4, 1));
    Tape t;
    std::vector<Node*> lower = {t.input(colvec({0.5, -1.0, 2.0})), t.input(colvec({1.5, 0.0, -2.0}))};
    Node* ce = frame_cross_entropy(t, lower, {0, 3}, w0.get(), b0.get());
    CHECK(ce->value.at(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    // identity head reproduces the direct softmax evaluation on [1,2,3]
    auto wi = ad::make_leaf(Matrix::identity(3));
    auto bi = ad::make_leaf(Matrix(3, 1));
    std::vector<Node*> one = {t.input(colvec({1.0, 2.0, 3.0}))};
    Node* picked = frame_cross_entropy(t, one, {2}, wi.get(), bi.get());
    CHECK(picked->value.at(0, 0) == doctest::Approx(0.4076059644443803).epsilon(1e-12));

    // saturated softmax: true-class logit 1e3 above the rest
    auto bsat = ad::make_leaf(colvec({0.0, 1000.0, 0.0}));
    std::vector<Node*> zero_state = {t.input(Matrix(3, 1))};
    Node* sat = frame_cross_entropy(t, zero_state, {1}, wi.get(), bsat.get());
    CHECK(sat->value.at(0, 0) < 1e-6);

    CHECK_THROWS_AS(frame_cross_entropy(t, one, {7}, wi.get(), bi.get()), std::out_of_range);
    CHECK_THROWS_AS(frame_cross_entropy(t, one, {-1}, wi.get(), bi.get()), std::out_of_range);
    CHECK_THROWS_AS(frame_cross_entropy(t, one, {0, 1}, wi.get(), bi.get()), std::invalid_argument);
}

TEST_CASE("patn_loss endpoints and convex combination") {
    Rng rng(34);
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 41);
    const TinyBatch batch = random_batch(rng, 3, cfg.input_dim, cfg.num_classes, 2, 4);

    struct Values {
        double total, triplet, ce, active;
    };
    auto run = [&](double lambda, CeBranchPolicy policy = CeBranchPolicy::all_branches) {
        EncoderVars vars = EncoderVars::make(params);
        Tape t;
        BatchEncodeOut enc = encode_batch(t, vars, batch.frames_by_t, batch.lengths);
        LossConfig lc;
        lc.margin = 0.5;
        lc.lambda = lambda;
        lc.ce_branch_policy = policy;
        const TripletBatchLoss loss = patn_loss(t, enc, 3, batch.labels, vars, lc);
        return Values{loss.total->value.at(0, 0), loss.triplet_term, loss.ce_term,
                      loss.active_fraction};
    };

    const Values at0 = run(0.0);
    CHECK(at0.total == at0.triplet);
    CHECK(at0.ce == 0.0);

    const Values at1 = run(1.0);
    CHECK(at1.total == at1.ce);

    const Values mid = run(0.1);
    CHECK(mid.total == doctest::Approx(0.9 * mid.triplet + 0.1 * mid.ce).epsilon(1e-12));
    CHECK(mid.triplet >= 0.0);
    CHECK(mid.ce >= 0.0);
    CHECK(mid.active >= 0.0);
    CHECK(mid.active <= 1.0);

    // Eq. 4 arithmetic at the spec's example values
    CHECK(0.9 * 0.30 + 0.1 * 2.00 == doctest::Approx(0.47).epsilon(1e-15));

    // anchor_only restricts CE to the first block of columns
    const Values anchor_only = run(1.0, CeBranchPolicy::anchor_only);
    CHECK(anchor_only.ce != at1.ce);

    // lambda > 0 without labels is a configuration error
    EncoderVars vars = EncoderVars::make(params);
    Tape t;
    BatchEncodeOut enc = encode_batch(t, vars, batch.frames_by_t, batch.lengths);
    LossConfig lc;
    lc.lambda = 0.5;
    CHECK_THROWS_AS(patn_loss(t, enc, 3, {}, vars, lc), std::invalid_argument);

    LossConfig bad;
    bad.lambda = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = LossConfig{};
    bad.margin = 2.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("patn_loss gradients match finite differences on a tiny model") {
    Rng rng(35);
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 42);
    const TinyBatch batch = random_batch(rng, 2, cfg.input_dim, cfg.num_classes, 2, 4);

    EncoderVars vars = EncoderVars::make(params);
    LossConfig lc;
    lc.margin = 0.5;
    lc.lambda = 0.3;
    auto build = [&](Tape& t) {
        BatchEncodeOut enc = encode_batch(t, vars, batch.frames_by_t, batch.lengths);
        return patn_loss(t, enc, 2, batch.labels, vars, lc).total;
    };
    Tape t;
    t.backward(build(t));
    auto f = [&]() {
        Tape tt;
        return build(tt)->value.at(0, 0);
    };
    CHECK(ad::gradcheck(f, vars.all(), 1e-5) < 1e-4);
}

TEST_CASE("lambda 0 training step equals a CE-detached triplet-only build") {
    Rng rng(36);
    const EncoderConfig cfg = tiny_config();
    const EncoderParams params = init_params(cfg, 43);
    const TinyBatch batch = random_batch(rng, 3, cfg.input_dim, cfg.num_classes, 2, 4);
    const AdamHyper hyper;

    auto step = [&](bool through_patn_loss) {
        EncoderVars vars = EncoderVars::make(params);
        Tape t;
        BatchEncodeOut enc = encode_batch(t, vars, batch.frames_by_t, batch.lengths);
        Node* loss;
        if (through_patn_loss) {
            LossConfig lc;
            lc.margin = 0.5;
            lc.lambda = 0.0;
            loss = patn_loss(t, enc, 3, batch.labels, vars, lc).total;
        } else {
            // triplet-only computation written out directly, no CE head anywhere
            Node* anchors = slice_cols(t, enc.embeddings, 0, 3);
            Node* sames = slice_cols(t, enc.embeddings, 3, 6);
            Node* diffs = slice_cols(t, enc.embeddings, 6, 9);
            Node* hinge = relu(
                t, add_const(t, sub(t, cosine_distance_cols(t, anchors, sames),
                                    cosine_distance_cols(t, anchors, diffs)),
                             0.5));
            loss = scale(t, sum_all(t, hinge), 1.0 / 3.0);
        }
        t.backward(loss);
        AdamState state = AdamState::init(vars.all());
        adam_step(vars.all(), state, hyper);
        return vars.to_params();
    };

    const EncoderParams via_patn = step(true);
    const EncoderParams via_direct = step(false);
    for (size_t l = 0; l < via_patn.layers.size(); ++l) {
        const auto& a = via_patn.layers[l].first.input_weights;
        const auto& b = via_direct.layers[l].first.input_weights;
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise
    }
    for (size_t i = 0; i < via_patn.head_weights.size(); ++i)
        CHECK(via_patn.head_weights[i] == via_direct.head_weights[i]);
}
