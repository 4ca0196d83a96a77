#include "faircert/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "faircert/errors.hpp"

namespace faircert::embed {

EmbeddingTable::EmbeddingTable(lm::Vocab v, std::size_t d) : vocab(std::move(v)), dim(d) {
    vocab.add(lm::kSubwordPrefix);
    weights = Matrix(vocab.size(), dim);
}

EmbeddingTable EmbeddingTable::random_init(lm::Vocab v, std::size_t d,
                                           std::uint64_t seed) {
    EmbeddingTable t(std::move(v), d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (double& w : t.weights.data) w = u(rng);
    return t;
}

VecD EmbeddingTable::row_vec(int id) const {
    const double* r = row(id);
    return VecD(r, r + dim);
}

void EmbeddingTable::check_invariants() const {
    if (weights.rows != vocab.size() || weights.cols != dim)
        throw SchemaError("embedding table: weight shape does not match vocabulary");
    if (!all_finite(weights))
        throw SchemaError("embedding table: non-finite weight");
    for (const char* t : {lm::kPadToken, lm::kUnkToken, lm::kSubwordPrefix})
        if (!vocab.contains(t))
            throw SchemaError(std::string("embedding table: missing special token ") + t);
}

void ContrastiveConfig::check() const {
    if (alpha < 0.0) throw InvalidArgument("contrastive config: alpha must be >= 0");
    if (margin <= 0.0) throw InvalidArgument("contrastive config: margin must be > 0");
    if (epochs <= 0) throw InvalidArgument("contrastive config: epochs must be > 0");
    if (learning_rate <= 0.0)
        throw InvalidArgument("contrastive config: learning rate must be > 0");
    if (batch_size == 0) throw InvalidArgument("contrastive config: batch size must be > 0");
}

double contrastive_loss(double distance, int label, double alpha, double margin) {
    if (distance < 0.0) throw InvalidArgument("contrastive_loss: distance must be >= 0");
    if (label != 0 && label != 1) throw InvalidArgument("contrastive_loss: label must be 0/1");
    if (margin <= 0.0) throw InvalidArgument("contrastive_loss: margin must be > 0");
    if (alpha < 0.0) throw InvalidArgument("contrastive_loss: alpha must be >= 0");
    return (1.0 - label) * alpha * distance + label * std::max(0.0, margin - distance);
}

namespace {

std::vector<int> phrase_ids(const EmbeddingTable& table, const std::string& phrase) {
    std::vector<int> ids;
    for (const std::string& piece : lm::subword_tokenize(phrase, table.vocab))
        ids.push_back(table.vocab.id_or_unk(piece));
    return ids;
}

VecD mean_rows(const EmbeddingTable& table, const std::vector<int>& ids) {
    if (ids.empty()) throw InvalidArgument("embed_phrase: empty token sequence");
    VecD v(table.dim, 0.0);
    for (int id : ids) {
        const double* r = table.row(id);
        for (std::size_t j = 0; j < table.dim; ++j) v[j] += r[j];
    }
    for (double& x : v) x /= static_cast<double>(ids.size());
    return v;
}

}  // namespace

VecD embed_phrase(const EmbeddingTable& table, const std::vector<std::string>& tokens) {
    if (tokens.empty()) throw InvalidArgument("embed_phrase: empty token sequence");
    std::vector<int> ids;
    for (const std::string& t : tokens) {
        for (const std::string& piece : lm::subword_tokenize(t, table.vocab))
            ids.push_back(table.vocab.id_or_unk(piece));
    }
    return mean_rows(table, ids);
}

double pair_distance(const EmbeddingTable& table, const WordPair& pair, Norm norm) {
    const VecD h1 = mean_rows(table, phrase_ids(table, pair.left));
    const VecD h2 = mean_rows(table, phrase_ids(table, pair.right));
    const VecD d = sub(h1, h2);
    return norm == Norm::L2 ? norm_l2(d) : norm_linf(d);
}

Matrix contrastive_batch_gradient(const EmbeddingTable& table,
                                  const std::vector<WordPair>& pairs,
                                  double alpha, double margin, double* loss_out) {
    Matrix grad(table.weights.rows, table.weights.cols);
    double loss_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(pairs.size());

    for (const WordPair& p : pairs) {
        const std::vector<int> ids1 = phrase_ids(table, p.left);
        const std::vector<int> ids2 = phrase_ids(table, p.right);
        const VecD h1 = mean_rows(table, ids1);
        const VecD h2 = mean_rows(table, ids2);
        const VecD diff = sub(h1, h2);
        const double d = norm_l2(diff);
        loss_sum += contrastive_loss(d, p.label, alpha, margin);

        // dL/dd; the hinge is flat past the margin, and d = 0 sits at a
        // subgradient minimum, where 0 is used.
        double dl_dd = 0.0;
        if (p.label == 0)
            dl_dd = alpha;
        else if (d < margin)
            dl_dd = -1.0;
        if (d == 0.0 || dl_dd == 0.0) continue;

        const double scale = inv_b * dl_dd / d;
        const double w1 = scale / static_cast<double>(ids1.size());
        const double w2 = -scale / static_cast<double>(ids2.size());
        for (int id : ids1) {
            double* g = grad.row(static_cast<std::size_t>(id));
            for (std::size_t j = 0; j < table.dim; ++j) g[j] += w1 * diff[j];
        }
        for (int id : ids2) {
            double* g = grad.row(static_cast<std::size_t>(id));
            for (std::size_t j = 0; j < table.dim; ++j) g[j] += w2 * diff[j];
        }
    }
    if (loss_out) *loss_out = loss_sum * inv_b;
    return grad;
}

TrainEmbeddingResult train_embedding(const std::vector<WordPair>& pairs,
                                     const ContrastiveConfig& cfg,
                                     EmbeddingTable table) {
    if (pairs.empty()) throw InvalidArgument("train_embedding: no pairs");
    cfg.check();
    table.check_invariants();

    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    Matrix m(table.weights.rows, table.weights.cols);
    Matrix v(table.weights.rows, table.weights.cols);
    long step = 0;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    VecD epoch_loss;
    epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_acc = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<WordPair> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(pairs[order[i]]);

            double batch_loss = 0.0;
            Matrix grad = contrastive_batch_gradient(table, batch, cfg.alpha,
                                                     cfg.margin, &batch_loss);
            if (!std::isfinite(batch_loss))
                throw NumericError("train_embedding: non-finite loss", epoch);
            loss_acc += batch_loss;
            ++batches;

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < table.weights.data.size(); ++i) {
                const double g = grad.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                table.weights.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + adam_eps);
            }
        }
        epoch_loss.push_back(loss_acc / static_cast<double>(batches));
    }
    return {std::move(table), std::move(epoch_loss)};
}

NeighborSet nearest_neighbors(const EmbeddingTable& table, const std::string& anchor,
                              std::size_t k) {
    if (!table.vocab.contains(anchor))
        throw NotFoundError("nearest_neighbors: unknown anchor " + anchor);
    if (k >= table.vocab.size())
        throw InvalidArgument("nearest_neighbors: k must be < vocab size");

    const int anchor_id = table.vocab.id(anchor);
    const double* a = table.row(anchor_id);

    std::vector<std::pair<double, int>> dists;
    dists.reserve(table.vocab.size() - 1);
    for (std::size_t id = 0; id < table.vocab.size(); ++id) {
        if (static_cast<int>(id) == anchor_id) continue;
        const double* r = table.row(static_cast<int>(id));
        double d = 0.0;
        for (std::size_t j = 0; j < table.dim; ++j)
            d = std::max(d, std::abs(a[j] - r[j]));
        dists.emplace_back(d, static_cast<int>(id));
    }
    std::sort(dists.begin(), dists.end());  // (distance, vocab index) ascending

    NeighborSet out{anchor, {}};
    out.neighbors.reserve(k);
    for (std::size_t i = 0; i < k && i < dists.size(); ++i)
        out.neighbors.emplace_back(table.vocab.token(dists[i].second), dists[i].first);
    return out;
}

}  // namespace faircert::embed
