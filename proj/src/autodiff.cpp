#include "patn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#ifdef PATN_USE_CBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace patn::ad {

namespace {

// Graph building allocates and frees megabytes of matrices per batch; with
// default glibc settings those go through mmap/munmap and the page faults
// dominate the runtime. Keep freed blocks in the heap instead. BLAS threads
// are pinned to one so GEMM reductions keep a fixed order (bitwise
// reproducible checkpoints) and spin-waits cannot pile up on small machines.
struct AllocatorTuning {
    AllocatorTuning() {
#ifdef __GLIBC__
        mallopt(M_MMAP_MAX, 0);
        mallopt(M_TRIM_THRESHOLD, -1);
#endif
#ifdef PATN_USE_CBLAS
        openblas_set_num_threads(1);
#endif
    }
};

void tune_allocator_once() {
    [[maybe_unused]] static AllocatorTuning tuned;
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

void check_same_shape(const char* op, const Node* a, const Node* b) {
    if (!a->value.same_shape(b->value)) shape_error(op, a->value, b->value);
}

}  // namespace

void Node::add_to_grad(const Matrix& delta) {
    if (grad.empty()) grad = Matrix(value.rows(), value.cols());
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += delta[i];
}

void Node::add_to_adjoint(const Matrix& delta) {
    if (adjoint.empty()) adjoint = Matrix(value.rows(), value.cols());
    for (size_t i = 0; i < adjoint.size(); ++i) adjoint[i] += delta[i];
}

std::unique_ptr<Node> make_leaf(Matrix value) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->external = true;
    return n;
}

Node* record(Tape& t, Matrix value, std::vector<Node*> parents, std::function<void(Node&)> rule) {
    tune_allocator_once();
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backward_rule = std::move(rule);
    Node* raw = n.get();
    t.nodes_.push_back(std::move(n));
    return raw;
}

Node* Tape::input(Matrix value) { return record(*this, std::move(value), {}, nullptr); }

void Tape::backward(Node* loss, bool release_memory) {
    if (loss == nullptr) throw std::invalid_argument("backward: null loss");
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        throw std::invalid_argument("backward: loss must be 1x1, got " + loss->value.shape_str());
    if (released_) throw std::logic_error("backward: tape already released");

    size_t loss_index = nodes_.size();
    for (size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].get() == loss) {
            loss_index = i;
            break;
        }
    }
    if (loss_index == nodes_.size()) throw std::invalid_argument("backward: loss not owned by this tape");

    loss->adjoint = Matrix::filled(1, 1, 1.0);
    std::vector<Node*> touched_leaves;
    for (size_t i = loss_index + 1; i-- > 0;) {
        Node* n = nodes_[i].get();
        if (n->adjoint.empty()) continue;  // not reachable from the loss
        if (n->backward_rule) n->backward_rule(*n);
        for (Node* p : n->parents)
            if (p->external) touched_leaves.push_back(p);
        if (!release_memory) {
            n->add_to_grad(n->adjoint);
        }
        n->adjoint.release();
        if (release_memory) {
            n->value.release();
            n->grad.release();
        }
    }
    // External leaves (parameters) sit outside the tape; fold their pass
    // adjoints into the persistent gradients now.
    std::sort(touched_leaves.begin(), touched_leaves.end());
    touched_leaves.erase(std::unique(touched_leaves.begin(), touched_leaves.end()), touched_leaves.end());
    for (Node* leaf : touched_leaves) {
        if (!leaf->adjoint.empty()) {
            leaf->add_to_grad(leaf->adjoint);
            leaf->adjoint.release();
        }
    }
    if (release_memory) released_ = true;
}

// ---- op implementations -------------------------------------------------

Node* matmul(Tape& t, Node* a, Node* b) {
    if (a->value.cols() != b->value.rows()) shape_error("matmul", a->value, b->value);
    Matrix v = patn::matmul(a->value, b->value);
    return record(t, std::move(v), {a, b}, [a, b](Node& out) {
        a->add_to_adjoint(matmul_nt(out.adjoint, b->value));
        b->add_to_adjoint(matmul_tn(a->value, out.adjoint));
    });
}

namespace {

template <typename Fwd, typename Bwd>
Node* binary_op(Tape& t, const char* name, Node* a, Node* b, Fwd fwd, Bwd bwd) {
    check_same_shape(name, a, b);
    Matrix v(a->value.rows(), a->value.cols());
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a->value[i], b->value[i]);
    return record(t, std::move(v), {a, b}, [a, b, bwd](Node& out) {
        Matrix da(a->value.rows(), a->value.cols());
        Matrix db = da;
        for (size_t i = 0; i < out.adjoint.size(); ++i) {
            auto [ga, gb] = bwd(a->value[i], b->value[i], out.value[i]);
            da[i] = out.adjoint[i] * ga;
            db[i] = out.adjoint[i] * gb;
        }
        a->add_to_adjoint(da);
        b->add_to_adjoint(db);
    });
}

struct Pair {
    double first, second;
};

template <typename Fwd, typename Bwd>
Node* unary_op(Tape& t, Node* a, Fwd fwd, Bwd bwd) {
    Matrix v(a->value.rows(), a->value.cols());
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a->value[i]);
    return record(t, std::move(v), {a}, [a, bwd](Node& out) {
        Matrix da(a->value.rows(), a->value.cols());
        for (size_t i = 0; i < out.adjoint.size(); ++i) da[i] = out.adjoint[i] * bwd(a->value[i], out.value[i]);
        a->add_to_adjoint(da);
    });
}

}  // namespace

Node* add(Tape& t, Node* a, Node* b) {
    return binary_op(
        t, "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return Pair{1.0, 1.0}; });
}

Node* sub(Tape& t, Node* a, Node* b) {
    return binary_op(
        t, "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return Pair{1.0, -1.0}; });
}

Node* mul(Tape& t, Node* a, Node* b) {
    return binary_op(
        t, "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return Pair{y, x}; });
}

Node* div(Tape& t, Node* a, Node* b) {
    return binary_op(
        t, "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double) { return Pair{1.0 / y, -x / (y * y)}; });
}

Node* sigmoid(Tape& t, Node* a) {
    return unary_op(
        t, a,
        [](double x) {
            // split on sign so exp never overflows
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double s) { return s * (1.0 - s); });
}

Node* tanh(Tape& t, Node* a) {
    return unary_op(t, a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Node* exp(Tape& t, Node* a) {
    return unary_op(t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Node* log(Tape& t, Node* a) {
    for (size_t i = 0; i < a->value.size(); ++i)
        if (a->value[i] <= 0.0)
            throw std::domain_error("log: non-positive entry " + std::to_string(a->value[i]));
    return unary_op(t, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Node* relu(Tape& t, Node* a) {
    return unary_op(t, a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node* sqrt(Tape& t, Node* a) {
    return unary_op(t, a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Node* scale(Tape& t, Node* a, double k) {
    return unary_op(t, a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Node* add_const(Tape& t, Node* a, double k) {
    return unary_op(t, a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Node* add_col_broadcast(Tape& t, Node* a, Node* bias) {
    if (bias->value.cols() != 1 || bias->value.rows() != a->value.rows())
        shape_error("add_col_broadcast", a->value, bias->value);
    const int rows = a->value.rows(), cols = a->value.cols();
    Matrix v = a->value;
    for (int r = 0; r < rows; ++r) {
        const double b = bias->value.at(r, 0);
        for (int c = 0; c < cols; ++c) v.at(r, c) += b;
    }
    return record(t, std::move(v), {a, bias}, [a, bias, rows, cols](Node& out) {
        a->add_to_adjoint(out.adjoint);
        Matrix db(rows, 1);
        for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < cols; ++c) s += out.adjoint.at(r, c);
            db.at(r, 0) = s;
        }
        bias->add_to_adjoint(db);
    });
}

Node* concat_rows(Tape& t, Node* a, Node* b) {
    if (a->value.cols() != b->value.cols()) shape_error("concat_rows", a->value, b->value);
    const int ra = a->value.rows(), rb = b->value.rows(), cols = a->value.cols();
    Matrix v(ra + rb, cols);
    std::copy_n(a->value.data(), a->value.size(), v.data());
    std::copy_n(b->value.data(), b->value.size(), v.data() + a->value.size());
    return record(t, std::move(v), {a, b}, [a, b, ra, rb, cols](Node& out) {
        Matrix da(ra, cols), db(rb, cols);
        std::copy_n(out.adjoint.data(), da.size(), da.data());
        std::copy_n(out.adjoint.data() + da.size(), db.size(), db.data());
        a->add_to_adjoint(da);
        b->add_to_adjoint(db);
    });
}

Node* slice_rows(Tape& t, Node* a, int r0, int r1) {
    if (r0 < 0 || r1 > a->value.rows() || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                    std::to_string(r1) + ") for " + a->value.shape_str());
    const int cols = a->value.cols();
    Matrix v(r1 - r0, cols);
    std::copy_n(a->value.data() + static_cast<size_t>(r0) * cols, v.size(), v.data());
    return record(t, std::move(v), {a}, [a, r0, cols](Node& out) {
        if (a->adjoint.empty()) a->adjoint = Matrix(a->value.rows(), a->value.cols());
        double* dst = a->adjoint.data() + static_cast<size_t>(r0) * cols;
        for (size_t i = 0; i < out.adjoint.size(); ++i) dst[i] += out.adjoint[i];
    });
}

Node* slice_cols(Tape& t, Node* a, int c0, int c1) {
    if (c0 < 0 || c1 > a->value.cols() || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + a->value.shape_str());
    const int rows = a->value.rows();
    Matrix v(rows, c1 - c0);
    for (int r = 0; r < rows; ++r)
        for (int c = c0; c < c1; ++c) v.at(r, c - c0) = a->value.at(r, c);
    return record(t, std::move(v), {a}, [a, c0, rows](Node& out) {
        if (a->adjoint.empty()) a->adjoint = Matrix(a->value.rows(), a->value.cols());
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out.adjoint.cols(); ++c) a->adjoint.at(r, c0 + c) += out.adjoint.at(r, c);
    });
}

Node* sum_all(Tape& t, Node* a) {
    double s = 0.0;
    for (size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return record(t, Matrix::filled(1, 1, s), {a}, [a](Node& out) {
        const double g = out.adjoint.at(0, 0);
        Matrix da = Matrix::filled(a->value.rows(), a->value.cols(), g);
        a->add_to_adjoint(da);
    });
}

Node* column_sums(Tape& t, Node* a) {
    const int rows = a->value.rows(), cols = a->value.cols();
    Matrix v(1, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) v.at(0, c) += a->value.at(r, c);
    return record(t, std::move(v), {a}, [a, rows, cols](Node& out) {
        Matrix da(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) da.at(r, c) = out.adjoint.at(0, c);
        a->add_to_adjoint(da);
    });
}

Node* mix_cols(Tape& t, Node* a, Node* b, std::vector<uint8_t> keep) {
    check_same_shape("mix_cols", a, b);
    const int rows = a->value.rows(), cols = a->value.cols();
    if (static_cast<int>(keep.size()) != cols)
        throw std::invalid_argument("mix_cols: mask length " + std::to_string(keep.size()) +
                                    " != column count " + std::to_string(cols));
    Matrix v(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) v.at(r, c) = keep[c] ? a->value.at(r, c) : b->value.at(r, c);
    return record(t, std::move(v), {a, b}, [a, b, rows, cols, keep = std::move(keep)](Node& out) {
        Matrix da(rows, cols), db(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                (keep[c] ? da : db).at(r, c) = out.adjoint.at(r, c);
        a->add_to_adjoint(da);
        b->add_to_adjoint(db);
    });
}

Node* softmax_nll_cols(Tape& t, Node* logits, std::vector<int> labels) {
    const int classes = logits->value.rows(), cols = logits->value.cols();
    if (static_cast<int>(labels.size()) != cols)
        throw std::invalid_argument("softmax_nll_cols: label count " + std::to_string(labels.size()) +
                                    " != column count " + std::to_string(cols));
    for (int c = 0; c < cols; ++c)
        if (labels[c] >= classes)
            throw std::out_of_range("softmax_nll_cols: label " + std::to_string(labels[c]) +
                                    " out of range for " + std::to_string(classes) + " classes");
    Matrix v(1, cols);
    for (int c = 0; c < cols; ++c) {
        if (labels[c] < 0) continue;
        double m = logits->value.at(0, c);
        for (int r = 1; r < classes; ++r) m = std::max(m, logits->value.at(r, c));
        double z = 0.0;
        for (int r = 0; r < classes; ++r) z += std::exp(logits->value.at(r, c) - m);
        v.at(0, c) = m + std::log(z) - logits->value.at(labels[c], c);
    }
    return record(t, std::move(v), {logits}, [logits, classes, cols, labels = std::move(labels)](Node& out) {
        Matrix dl(classes, cols);
        for (int c = 0; c < cols; ++c) {
            if (labels[c] < 0) continue;
            const double g = out.adjoint.at(0, c);
            if (g == 0.0) continue;
            double m = logits->value.at(0, c);
            for (int r = 1; r < classes; ++r) m = std::max(m, logits->value.at(r, c));
            double z = 0.0;
            for (int r = 0; r < classes; ++r) z += std::exp(logits->value.at(r, c) - m);
            for (int r = 0; r < classes; ++r) {
                const double p = std::exp(logits->value.at(r, c) - m) / z;
                dl.at(r, c) = g * (p - (r == labels[c] ? 1.0 : 0.0));
            }
        }
        logits->add_to_adjoint(dl);
    });
}

// ---- gradient checking ---------------------------------------------------

double gradcheck(const std::function<double()>& f, std::span<Node* const> params, double epsilon) {
    if (epsilon <= 0.0) throw std::invalid_argument("gradcheck: epsilon must be positive");
    double worst = 0.0;
    for (Node* p : params) {
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + epsilon;
            const double up = f();
            p->value[i] = saved - epsilon;
            const double down = f();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = p->grad.empty() ? 0.0 : p->grad[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace patn::ad
