#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "patn/matrix.hpp"

namespace patn::ad {

class Tape;

/// One vertex of the computation graph. Nodes are immutable after creation
/// except for `grad`, which accumulates across backward passes until cleared.
struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily; same shape as value once touched
    std::vector<Node*> parents;
    std::function<void(Node&)> backward_rule;  // reads adjoint, pushes into parents' adjoints
    bool external = false;                     // leaf owned outside any tape (parameters)
    Matrix adjoint;                            // scratch for the pass in flight

    void add_to_grad(const Matrix& delta);
    void add_to_adjoint(const Matrix& delta);
    void zero_grad() { grad = Matrix(); }
};

/// Creates a standalone leaf (a trainable parameter). Its gradient persists
/// across tapes and batches until zero_grad().
std::unique_ptr<Node> make_leaf(Matrix value);

/// Owns the intermediate nodes of one forward computation. Creation order is
/// a topological order, so backward is a single reverse sweep over the tape.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf holding a constant input (features, masks as values, etc.).
    Node* input(Matrix value);

    /// Runs reverse-mode accumulation from `loss` (must be 1x1). Every node
    /// reachable from the loss gets dLoss/dNode *added* to its `grad`, so a
    /// second call without zeroing doubles every gradient.
    ///
    /// With release_memory = true, values and gradients of tape-owned nodes
    /// are freed as the sweep passes them (parameter leaves keep both); the
    /// tape cannot be used again afterwards. Intended for the training loop.
    void backward(Node* loss, bool release_memory = false);

    size_t node_count() const { return nodes_.size(); }

    friend Node* record(Tape& t, Matrix value, std::vector<Node*> parents,
                        std::function<void(Node&)> rule);

private:
    std::vector<std::unique_ptr<Node>> nodes_;
    bool released_ = false;
};

// ---- graph operations -------------------------------------------------

Node* matmul(Tape& t, Node* a, Node* b);

// Elementwise; binary ops require equal shapes.
Node* add(Tape& t, Node* a, Node* b);
Node* sub(Tape& t, Node* a, Node* b);
Node* mul(Tape& t, Node* a, Node* b);
Node* div(Tape& t, Node* a, Node* b);
Node* sigmoid(Tape& t, Node* a);
Node* tanh(Tape& t, Node* a);
Node* exp(Tape& t, Node* a);
Node* log(Tape& t, Node* a);  // domain error on non-positive entries
Node* relu(Tape& t, Node* a);
Node* sqrt(Tape& t, Node* a);

Node* scale(Tape& t, Node* a, double k);
Node* add_const(Tape& t, Node* a, double k);

/// out = a + bias broadcast across columns; a is (R x C), bias (R x 1).
Node* add_col_broadcast(Tape& t, Node* a, Node* bias);

/// Stacks a on top of b; column counts must match.
Node* concat_rows(Tape& t, Node* a, Node* b);

Node* slice_rows(Tape& t, Node* a, int r0, int r1);
Node* slice_cols(Tape& t, Node* a, int c0, int c1);

/// Sum of all entries -> 1x1.
Node* sum_all(Tape& t, Node* a);

/// Per-column sums -> (1 x C).
Node* column_sums(Tape& t, Node* a);

/// out[:,c] = keep[c] ? a[:,c] : b[:,c]. Used to freeze recurrent state on
/// padded frames; gradient is routed to whichever branch was selected.
Node* mix_cols(Tape& t, Node* a, Node* b, std::vector<uint8_t> keep);

/// Per-column negative log softmax likelihood: out is (1 x C) with
/// out[0,c] = -log softmax(logits[:,c])[labels[c]], or 0 where labels[c] < 0
/// (padding sentinel). Uses the max-subtraction trick.
Node* softmax_nll_cols(Tape& t, Node* logits, std::vector<int> labels);

// ---- gradient checking -------------------------------------------------

/// Central finite differences of `f` against the analytic gradients already
/// stored in params[i]->grad. Returns the max over all parameter entries of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
double gradcheck(const std::function<double()>& f, std::span<Node* const> params, double epsilon = 1e-5);

}  // namespace patn::ad
