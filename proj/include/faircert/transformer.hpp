#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "faircert/embedding.hpp"
#include "faircert/linalg.hpp"

namespace faircert::lm {

/// One post-norm encoder block (attention + feed-forward, each followed by
/// residual and layer norm). Projections use the row-vector convention
/// y = x·W + b, so W is (in × out).
struct EncoderBlock {
    Matrix wq, wk, wv, wo;  // d × d
    VecD bq, bk, bv, bo;    // d
    VecD ln1_gamma, ln1_beta;
    Matrix ff_w1;  // d × ff_dim
    VecD ff_b1;
    Matrix ff_w2;  // ff_dim × d
    VecD ff_b2;
    VecD ln2_gamma, ln2_beta;
};

struct ModelHyper {
    std::size_t heads = 2;
    std::size_t dim = 8;
    std::size_t ff_dim = 8;
    std::size_t max_seq = 16;
    double dropout = 0.1;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Frozen-embedding transformer encoder classifier with mean pooling over
/// non-PAD positions and a two-logit head.
struct TransformerModel {
    embed::EmbeddingTable embedding;
    bool embedding_frozen = true;  // training requires this to stay true
    Matrix positional;             // max_seq × dim, fixed sinusoidal
    std::vector<EncoderBlock> blocks;
    Matrix head_w;  // dim × 2
    VecD head_b;    // 2
    ModelHyper hyper;

    std::size_t head_dim() const { return hyper.dim / hyper.heads; }

    /// Glorot-uniform initialization of all block/head weights (seeded);
    /// layer-norm scales start at 1, every bias at 0.
    static TransformerModel init(embed::EmbeddingTable table, std::size_t blocks,
                                 ModelHyper hyper, std::uint64_t seed);

    void check_invariants() const;  // throws SchemaError
};

/// max_seq × dim table of the fixed sinusoidal position encodings.
Matrix sinusoidal_positional(std::size_t max_seq, std::size_t dim);

/// Non-PAD position indices of an id sequence; an all-PAD sequence collapses
/// to the single position 0 so the forward pass stays total.
std::vector<std::size_t> active_positions(const std::vector<int>& ids);

/// Rows = embedding row + positional encoding for each active position.
Matrix embed_inputs(const TransformerModel& model, const std::vector<int>& ids,
                    const std::vector<std::size_t>& positions);

struct Prediction {
    VecD logits;  // 2
    VecD probs;   // softmax(logits)
    int label;    // argmax
};

/// Per-sentence forward cache (everything backprop and the attention tests
/// need to see).
struct ForwardTrace {
    std::vector<std::size_t> positions;
    Matrix x0;  // L × d
    struct BlockTrace {
        Matrix q, k, v;                 // L × d
        std::vector<Matrix> attn;       // per head, L × L row-stochastic
        Matrix concat;                  // L × d
        Matrix attn_out;                // after output projection (+ dropout)
        std::vector<char> attn_drop;    // dropout keep mask (training only)
        Matrix r1, x1_hat, x1;          // residual, normalized, block mid
        VecD ln1_rstd;                  // per position
        Matrix ff_pre, ff_act, ff_out;  // L×ff, L×ff, L×d (+ dropout)
        std::vector<char> ff_drop;
        Matrix r2, x2_hat, x2;
        VecD ln2_rstd;
    };
    std::vector<BlockTrace> block;
    VecD pooled;
    Prediction pred;
};

/// Forward pass from explicit input rows (embedding + positional already
/// applied). `rng` is only consulted when training = true and dropout > 0.
ForwardTrace forward_from_input(const TransformerModel& model, const Matrix& x0,
                                bool training = false, std::mt19937_64* rng = nullptr);

/// Forward pass on a padded id sequence of length max_seq.
Prediction forward(const TransformerModel& model, const std::vector<int>& ids,
                   bool training = false, std::mt19937_64* rng = nullptr);

/// Focal loss −α·(1−p_y)^γ·ln(p_y) with p_y clamped to [1e-12, 1].
double focal_loss(const VecD& probs, int label, double alpha, double gamma);

}  // namespace faircert::lm
