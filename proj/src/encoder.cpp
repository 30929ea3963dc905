#include "patn/encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "patn/rng.hpp"

namespace patn {

using ad::Node;
using ad::Tape;

namespace {

Matrix glorot(Rng& rng, int rows, int cols) {
    const double s = std::sqrt(6.0 / (rows + cols));
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-s, s);
    return m;
}

void check_config(const EncoderConfig& c) {
    if (c.layers < 1 || c.hidden < 1 || c.input_dim < 1 || c.num_classes < 1)
        throw std::invalid_argument("encoder config: dimensions must be positive");
    if (c.tap_layer < 1 || c.tap_layer > c.layers)
        throw std::invalid_argument("encoder config: tap_layer " + std::to_string(c.tap_layer) +
                                    " outside [1, " + std::to_string(c.layers) + "]");
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, uint64_t seed) {
    check_config(config);
    Rng rng(seed);
    EncoderParams p;
    p.config = config;
    const int h = config.hidden;
    for (int l = 0; l < config.layers; ++l) {
        const int d = l == 0 ? config.input_dim : 2 * h;
        auto make_cell = [&]() {
            LstmCellParams cell;
            cell.input_weights = glorot(rng, 4 * h, d);
            cell.recurrent_weights = glorot(rng, 4 * h, h);
            cell.biases = Matrix(4 * h, 1);
            for (int i = h; i < 2 * h; ++i) cell.biases.at(i, 0) = 1.0;  // forget gate
            return cell;
        };
        LstmCellParams fwd = make_cell();
        LstmCellParams bwd = make_cell();
        p.layers.emplace_back(std::move(fwd), std::move(bwd));
    }
    p.head_weights = glorot(rng, config.num_classes, 2 * h);
    p.head_bias = Matrix(config.num_classes, 1);
    return p;
}

// ---- parameter views -------------------------------------------------------

EncoderVars EncoderVars::make(const EncoderParams& p) {
    check_config(p.config);
    EncoderVars v;
    v.config_ = p.config;
    auto leaf = [&v](const Matrix& m) {
        v.owned_.push_back(ad::make_leaf(m));
        v.all_.push_back(v.owned_.back().get());
        return v.owned_.back().get();
    };
    for (const auto& [fwd, bwd] : p.layers) {
        CellVars f{leaf(fwd.input_weights), leaf(fwd.recurrent_weights), leaf(fwd.biases)};
        CellVars b{leaf(bwd.input_weights), leaf(bwd.recurrent_weights), leaf(bwd.biases)};
        v.layers_.emplace_back(f, b);
    }
    v.head_w_ = leaf(p.head_weights);
    v.head_b_ = leaf(p.head_bias);
    return v;
}

EncoderParams EncoderVars::to_params() const {
    EncoderParams p;
    p.config = config_;
    for (const auto& [f, b] : layers_) {
        LstmCellParams fwd{f.wx->value, f.wh->value, f.b->value};
        LstmCellParams bwd{b.wx->value, b.wh->value, b.b->value};
        p.layers.emplace_back(std::move(fwd), std::move(bwd));
    }
    p.head_weights = head_w_->value;
    p.head_bias = head_b_->value;
    return p;
}

void EncoderVars::zero_grads() {
    for (Node* n : all_) n->zero_grad();
}

// ---- encoding ---------------------------------------------------------------

std::pair<Node*, Node*> cell_step(Tape& t, const CellVars& cell, Node* x, Node* h, Node* c) {
    const int four_h = cell.wx->value.rows();
    const int hidden = four_h / 4;
    if (cell.wx->value.cols() != x->value.rows())
        throw std::invalid_argument("cell_step: input dim " + x->value.shape_str() +
                                    " incompatible with weights " + cell.wx->value.shape_str());
    if (h->value.rows() != hidden || c->value.rows() != hidden)
        throw std::invalid_argument("cell_step: state dim mismatch");

    Node* gates = add_col_broadcast(t, add(t, matmul(t, cell.wx, x), matmul(t, cell.wh, h)), cell.b);
    Node* in_gate = sigmoid(t, slice_rows(t, gates, 0, hidden));
    Node* forget_gate = sigmoid(t, slice_rows(t, gates, hidden, 2 * hidden));
    Node* candidate = ad::tanh(t, slice_rows(t, gates, 2 * hidden, 3 * hidden));
    Node* out_gate = sigmoid(t, slice_rows(t, gates, 3 * hidden, 4 * hidden));
    Node* c_next = add(t, mul(t, forget_gate, c), mul(t, in_gate, candidate));
    Node* h_next = mul(t, out_gate, ad::tanh(t, c_next));
    return {h_next, c_next};
}

std::vector<Node*> run_direction(Tape& t, const CellVars& cell, const std::vector<Node*>& frames,
                                 Direction dir, const std::vector<std::vector<uint8_t>>* masks) {
    if (frames.empty()) throw std::invalid_argument("run_direction: empty sequence");
    const int steps = static_cast<int>(frames.size());
    const int hidden = cell.wh->value.cols();
    const int cols = frames[0]->value.cols();

    Node* h = t.input(Matrix(hidden, cols));
    Node* c = t.input(Matrix(hidden, cols));
    std::vector<Node*> out(steps, nullptr);
    for (int step = 0; step < steps; ++step) {
        const int ti = dir == Direction::forward ? step : steps - 1 - step;
        auto [h_new, c_new] = cell_step(t, cell, frames[ti], h, c);
        if (masks) {
            c = mix_cols(t, c_new, c, (*masks)[ti]);
            h = mix_cols(t, h_new, h, (*masks)[ti]);
        } else {
            h = h_new;
            c = c_new;
        }
        out[ti] = h;
    }
    return out;
}

Matrix run_direction_values(const LstmCellParams& cell, const Matrix& frames, Direction dir) {
    Tape t;
    auto wx = ad::make_leaf(cell.input_weights);
    auto wh = ad::make_leaf(cell.recurrent_weights);
    auto b = ad::make_leaf(cell.biases);
    CellVars vars{wx.get(), wh.get(), b.get()};

    std::vector<Node*> cols;
    for (int r = 0; r < frames.rows(); ++r) {
        Matrix col(frames.cols(), 1);
        for (int c = 0; c < frames.cols(); ++c) col.at(c, 0) = frames.at(r, c);
        cols.push_back(t.input(std::move(col)));
    }
    std::vector<Node*> states = run_direction(t, vars, cols, dir);

    const int hidden = cell.recurrent_weights.cols();
    Matrix out(frames.rows(), hidden);
    for (int r = 0; r < frames.rows(); ++r)
        for (int c = 0; c < hidden; ++c) out.at(r, c) = states[r]->value.at(c, 0);
    return out;
}

namespace {

struct StackOut {
    std::vector<Node*> top_fwd, top_bwd;     // per frame, H x N
    std::vector<Node*> tap_concat;           // per frame, 2H x N
};

StackOut run_stack(Tape& t, const EncoderVars& vars, std::vector<Node*> layer_in,
                   const std::vector<std::vector<uint8_t>>* masks) {
    const auto& cfg = vars.config();
    StackOut out;
    std::vector<Node*> fwd, bwd;
    for (int l = 0; l < cfg.layers; ++l) {
        fwd = run_direction(t, vars.layers()[l].first, layer_in, Direction::forward, masks);
        bwd = run_direction(t, vars.layers()[l].second, layer_in, Direction::backward, masks);
        std::vector<Node*> joined(layer_in.size());
        for (size_t i = 0; i < layer_in.size(); ++i) joined[i] = concat_rows(t, fwd[i], bwd[i]);
        if (l == cfg.tap_layer - 1) out.tap_concat = joined;
        layer_in = std::move(joined);
    }
    out.top_fwd = std::move(fwd);
    out.top_bwd = std::move(bwd);
    return out;
}

}  // namespace

SeqEncodeOut encode(Tape& t, const EncoderVars& vars, const Matrix& frames) {
    if (frames.rows() < 1) throw std::invalid_argument("encode: empty sequence");
    if (frames.cols() != vars.config().input_dim)
        throw std::invalid_argument("encode: frame dim " + std::to_string(frames.cols()) +
                                    " != input_dim " + std::to_string(vars.config().input_dim));
    std::vector<Node*> cols;
    for (int r = 0; r < frames.rows(); ++r) {
        Matrix col(frames.cols(), 1);
        for (int c = 0; c < frames.cols(); ++c) col.at(c, 0) = frames.at(r, c);
        cols.push_back(t.input(std::move(col)));
    }
    StackOut stack = run_stack(t, vars, std::move(cols), nullptr);
    SeqEncodeOut out;
    out.embedding = concat_rows(t, stack.top_fwd.back(), stack.top_bwd.front());
    out.lower = std::move(stack.tap_concat);
    return out;
}

BatchEncodeOut encode_batch(Tape& t, const EncoderVars& vars, const std::vector<Matrix>& frames_by_t,
                            const std::vector<int>& lengths) {
    if (frames_by_t.empty()) throw std::invalid_argument("encode_batch: empty batch");
    const int t_max = static_cast<int>(frames_by_t.size());
    const int n = frames_by_t[0].cols();
    if (static_cast<int>(lengths.size()) != n)
        throw std::invalid_argument("encode_batch: lengths size != batch columns");
    for (int len : lengths)
        if (len < 1 || len > t_max)
            throw std::invalid_argument("encode_batch: length " + std::to_string(len) +
                                        " outside [1, " + std::to_string(t_max) + "]");

    std::vector<std::vector<uint8_t>> masks(t_max, std::vector<uint8_t>(n));
    for (int ti = 0; ti < t_max; ++ti)
        for (int i = 0; i < n; ++i) masks[ti][i] = ti < lengths[i] ? 1 : 0;

    std::vector<Node*> cols;
    cols.reserve(t_max);
    for (const Matrix& m : frames_by_t) cols.push_back(t.input(m));

    StackOut stack = run_stack(t, vars, std::move(cols), &masks);
    BatchEncodeOut out;
    out.embeddings = concat_rows(t, stack.top_fwd.back(), stack.top_bwd.front());
    out.lower = std::move(stack.tap_concat);
    out.frame_valid.resize(t_max, std::vector<int>(n));
    for (int ti = 0; ti < t_max; ++ti)
        for (int i = 0; i < n; ++i) out.frame_valid[ti][i] = masks[ti][i];
    return out;
}

std::pair<Embedding, FrameStates> encode_values(const EncoderParams& params, const Matrix& frames) {
    Tape t;
    EncoderVars vars = EncoderVars::make(params);
    SeqEncodeOut enc = encode(t, vars, frames);
    Embedding emb;
    emb.vec.resize(enc.embedding->value.rows());
    for (size_t i = 0; i < emb.vec.size(); ++i) emb.vec[i] = enc.embedding->value[i];
    FrameStates states;
    const int width = enc.lower.empty() ? 0 : enc.lower[0]->value.rows();
    states.per_frame = Matrix(static_cast<int>(enc.lower.size()), width);
    for (size_t r = 0; r < enc.lower.size(); ++r)
        for (int c = 0; c < width; ++c) states.per_frame.at(static_cast<int>(r), c) = enc.lower[r]->value.at(c, 0);
    return {std::move(emb), std::move(states)};
}

std::vector<std::vector<double>> embed_sequences(const EncoderParams& params,
                                                 const std::vector<const Matrix*>& frames,
                                                 int batch_size) {
    EncoderVars vars = EncoderVars::make(params);
    std::vector<std::vector<double>> out(frames.size());
    for (size_t start = 0; start < frames.size(); start += batch_size) {
        const size_t end = std::min(frames.size(), start + batch_size);
        const int n = static_cast<int>(end - start);
        int t_max = 0;
        std::vector<int> lengths(n);
        for (int i = 0; i < n; ++i) {
            lengths[i] = frames[start + i]->rows();
            t_max = std::max(t_max, lengths[i]);
        }
        const int d = params.config.input_dim;
        std::vector<Matrix> by_t(t_max, Matrix(d, n));
        for (int i = 0; i < n; ++i)
            for (int ti = 0; ti < lengths[i]; ++ti)
                for (int c = 0; c < d; ++c) by_t[ti].at(c, i) = frames[start + i]->at(ti, c);
        Tape t;
        BatchEncodeOut enc = encode_batch(t, vars, by_t, lengths);
        const int dim = enc.embeddings->value.rows();
        for (int i = 0; i < n; ++i) {
            out[start + i].resize(dim);
            for (int r = 0; r < dim; ++r) out[start + i][r] = enc.embeddings->value.at(r, i);
        }
    }
    return out;
}

// ---- checkpoint I/O -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'A', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_matrix(std::ostream& os, const Matrix& m) {
    write_u32(os, static_cast<uint32_t>(m.rows()));
    write_u32(os, static_cast<uint32_t>(m.cols()));
    for (size_t i = 0; i < m.size(); ++i) write_f64(os, m[i]);
}

Matrix read_matrix(std::istream& is, int want_rows, int want_cols, const char* what) {
    const uint32_t rows = read_u32(is);
    const uint32_t cols = read_u32(is);
    if (static_cast<int>(rows) != want_rows || static_cast<int>(cols) != want_cols)
        throw std::runtime_error(std::string("checkpoint: ") + what + " has shape (" +
                                 std::to_string(rows) + "x" + std::to_string(cols) + "), expected (" +
                                 std::to_string(want_rows) + "x" + std::to_string(want_cols) + ")");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (size_t i = 0; i < m.size(); ++i) m[i] = read_f64(is);
    return m;
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const auto& c = params.config;
    write_u32(os, static_cast<uint32_t>(c.layers));
    write_u32(os, static_cast<uint32_t>(c.hidden));
    write_u32(os, static_cast<uint32_t>(c.input_dim));
    write_u32(os, static_cast<uint32_t>(c.num_classes));
    write_u32(os, static_cast<uint32_t>(c.tap_layer));
    for (const auto& [fwd, bwd] : params.layers) {
        for (const LstmCellParams* cell : {&fwd, &bwd}) {
            write_matrix(os, cell->input_weights);
            write_matrix(os, cell->recurrent_weights);
            write_matrix(os, cell->biases);
        }
    }
    write_matrix(os, params.head_weights);
    write_matrix(os, params.head_bias);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    EncoderConfig cfg;
    cfg.layers = static_cast<int>(read_u32(is));
    cfg.hidden = static_cast<int>(read_u32(is));
    cfg.input_dim = static_cast<int>(read_u32(is));
    cfg.num_classes = static_cast<int>(read_u32(is));
    cfg.tap_layer = static_cast<int>(read_u32(is));
    check_config(cfg);

    EncoderParams p;
    p.config = cfg;
    const int h = cfg.hidden;
    for (int l = 0; l < cfg.layers; ++l) {
        const int d = p.layer_input_dim(l);
        auto read_cell = [&](const char* what) {
            LstmCellParams cell;
            cell.input_weights = read_matrix(is, 4 * h, d, what);
            cell.recurrent_weights = read_matrix(is, 4 * h, h, what);
            cell.biases = read_matrix(is, 4 * h, 1, what);
            return cell;
        };
        LstmCellParams fwd = read_cell("forward cell");
        LstmCellParams bwd = read_cell("backward cell");
        p.layers.emplace_back(std::move(fwd), std::move(bwd));
    }
    p.head_weights = read_matrix(is, cfg.num_classes, 2 * h, "head weights");
    p.head_bias = read_matrix(is, cfg.num_classes, 1, "head bias");
    return p;
}

}  // namespace patn
