#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "faircert/linalg.hpp"
#include "faircert/tokenizer.hpp"

namespace faircert::embed {

enum class Norm { L2, LInf };

/// Vocabulary-indexed table of d-dimensional embeddings. The special tokens
/// [PAD], [UNK] and the subword-continuation marker "##" are always present.
struct EmbeddingTable {
    lm::Vocab vocab;
    std::size_t dim = 0;
    Matrix weights;  // vocab.size() × dim

    EmbeddingTable() = default;
    EmbeddingTable(lm::Vocab v, std::size_t d);

    /// Seeded uniform(-0.05, 0.05) initialization of every entry.
    static EmbeddingTable random_init(lm::Vocab v, std::size_t d, std::uint64_t seed);

    const double* row(int id) const { return weights.row(static_cast<std::size_t>(id)); }
    VecD row_vec(int id) const;

    void check_invariants() const;  // throws SchemaError
};

/// One contrastive training record: y = 0 means similar, y = 1 dissimilar.
struct WordPair {
    std::string left;
    std::string right;
    int label = 0;
};

struct ContrastiveConfig {
    double alpha = 1.0;       // attraction weight on similar pairs
    double margin = 1.0;      // required separation of dissimilar pairs
    int epochs = 100;
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;

    void check() const;  // throws InvalidArgument
};

struct NeighborSet {
    std::string anchor;
    std::vector<std::pair<std::string, double>> neighbors;  // ascending ℓ∞ distance
};

/// Eq.-style contrastive loss on a precomputed pair distance:
/// (1−y)·α·d + y·max(0, m−d).
double contrastive_loss(double distance, int label, double alpha, double margin);

/// Mean of the subword embedding rows of a phrase (greedy wordpiece against
/// the table's vocabulary; unknown residues hit the [UNK] row).
VecD embed_phrase(const EmbeddingTable& table, const std::vector<std::string>& tokens);

double pair_distance(const EmbeddingTable& table, const WordPair& pair, Norm norm);

struct TrainEmbeddingResult {
    EmbeddingTable table;
    VecD epoch_loss;  // mean batch loss per epoch
};

/// Analytic gradient of the mean contrastive loss of `pairs` w.r.t. the
/// table's weights (same layout). Exposed for the finite-difference oracle.
Matrix contrastive_batch_gradient(const EmbeddingTable& table,
                                  const std::vector<WordPair>& pairs,
                                  double alpha, double margin,
                                  double* loss_out = nullptr);

/// Adam training of the table on ℓ2 pair distances. Deterministic per seed
/// (single-threaded, full shuffle per epoch).
TrainEmbeddingResult train_embedding(const std::vector<WordPair>& pairs,
                                     const ContrastiveConfig& cfg,
                                     EmbeddingTable table);

/// k nearest vocabulary rows by ℓ∞ distance, anchor excluded, ties broken by
/// ascending vocabulary index. Special tokens are regular candidates.
NeighborSet nearest_neighbors(const EmbeddingTable& table, const std::string& anchor,
                              std::size_t k);

}  // namespace faircert::embed
