#include "faircert/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "faircert/errors.hpp"

namespace faircert::lm {

namespace {

Matrix glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(in, out);
    for (double& x : m.data) x = u(rng);
    return m;
}

// y = x W + b for row-major L×in times in×out.
Matrix linear(const Matrix& x, const Matrix& w, const VecD& b) {
    Matrix y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double* r = y.row(i);
        for (std::size_t j = 0; j < y.cols; ++j) r[j] += b[j];
    }
    return y;
}

void softmax_row_inplace(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (std::size_t i = 0; i < n; ++i) row[i] /= sum;
}

// Post-norm layer norm over the feature axis of each row.
void layer_norm(const Matrix& x, const VecD& gamma, const VecD& beta,
                Matrix& x_hat, Matrix& out, VecD& rstd) {
    const std::size_t d = x.cols;
    x_hat = Matrix(x.rows, d);
    out = Matrix(x.rows, d);
    rstd.assign(x.rows, 0.0);
    for (std::size_t p = 0; p < x.rows; ++p) {
        const double* r = x.row(p);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += r[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = r[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd[p] = rs;
        double* xh = x_hat.row(p);
        double* o = out.row(p);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (r[j] - mean) * rs;
            o[j] = gamma[j] * xh[j] + beta[j];
        }
    }
}

// Inverted dropout; records the keep mask so backward can replay it.
void dropout_inplace(Matrix& x, double rate, std::mt19937_64& rng,
                     std::vector<char>& mask) {
    mask.assign(x.data.size(), 1);
    if (rate <= 0.0) return;
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (keep(rng)) {
            x.data[i] *= scale;
        } else {
            x.data[i] = 0.0;
            mask[i] = 0;
        }
    }
}

}  // namespace

Matrix sinusoidal_positional(std::size_t max_seq, std::size_t dim) {
    Matrix p(max_seq, dim);
    for (std::size_t pos = 0; pos < max_seq; ++pos) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double exponent = static_cast<double>(2 * (j / 2)) /
                                    static_cast<double>(dim);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            p.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return p;
}

TransformerModel TransformerModel::init(embed::EmbeddingTable table,
                                        std::size_t blocks, ModelHyper hyper,
                                        std::uint64_t seed) {
    if (hyper.dim != table.dim)
        throw InvalidArgument("model init: hyper.dim must match embedding dim");
    if (hyper.heads == 0 || hyper.dim % hyper.heads != 0)
        throw InvalidArgument("model init: dim must be divisible by heads");

    TransformerModel m;
    m.embedding = std::move(table);
    m.hyper = hyper;
    m.positional = sinusoidal_positional(hyper.max_seq, hyper.dim);
    std::mt19937_64 rng(seed);
    const std::size_t d = hyper.dim;
    for (std::size_t b = 0; b < blocks; ++b) {
        EncoderBlock blk;
        blk.wq = glorot(d, d, rng);
        blk.wk = glorot(d, d, rng);
        blk.wv = glorot(d, d, rng);
        blk.wo = glorot(d, d, rng);
        blk.bq.assign(d, 0.0);
        blk.bk.assign(d, 0.0);
        blk.bv.assign(d, 0.0);
        blk.bo.assign(d, 0.0);
        blk.ln1_gamma.assign(d, 1.0);
        blk.ln1_beta.assign(d, 0.0);
        blk.ff_w1 = glorot(d, hyper.ff_dim, rng);
        blk.ff_b1.assign(hyper.ff_dim, 0.0);
        blk.ff_w2 = glorot(hyper.ff_dim, d, rng);
        blk.ff_b2.assign(d, 0.0);
        blk.ln2_gamma.assign(d, 1.0);
        blk.ln2_beta.assign(d, 0.0);
        m.blocks.push_back(std::move(blk));
    }
    m.head_w = glorot(d, 2, rng);
    m.head_b.assign(2, 0.0);
    return m;
}

void TransformerModel::check_invariants() const {
    embedding.check_invariants();
    const std::size_t d = hyper.dim;
    if (d == 0 || hyper.heads == 0 || d % hyper.heads != 0)
        throw SchemaError("model: dim must be a positive multiple of heads");
    if (embedding.dim != d) throw SchemaError("model: embedding dim mismatch");
    if (positional.rows != hyper.max_seq || positional.cols != d)
        throw SchemaError("model: positional table shape mismatch");
    auto want = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows != r || m.cols != c)
            throw SchemaError(std::string("model: bad shape for ") + name);
    };
    auto want_v = [](const VecD& v, std::size_t n, const char* name) {
        if (v.size() != n)
            throw SchemaError(std::string("model: bad length for ") + name);
    };
    for (const EncoderBlock& b : blocks) {
        want(b.wq, d, d, "wq");
        want(b.wk, d, d, "wk");
        want(b.wv, d, d, "wv");
        want(b.wo, d, d, "wo");
        want_v(b.bq, d, "bq");
        want_v(b.bk, d, "bk");
        want_v(b.bv, d, "bv");
        want_v(b.bo, d, "bo");
        want_v(b.ln1_gamma, d, "ln1_gamma");
        want_v(b.ln1_beta, d, "ln1_beta");
        want(b.ff_w1, d, hyper.ff_dim, "ff_w1");
        want_v(b.ff_b1, hyper.ff_dim, "ff_b1");
        want(b.ff_w2, hyper.ff_dim, d, "ff_w2");
        want_v(b.ff_b2, d, "ff_b2");
        want_v(b.ln2_gamma, d, "ln2_gamma");
        want_v(b.ln2_beta, d, "ln2_beta");
    }
    want(head_w, d, 2, "head_w");
    want_v(head_b, 2, "head_b");
}

std::vector<std::size_t> active_positions(const std::vector<int>& ids) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] != Vocab::kPadId) pos.push_back(i);
    if (pos.empty()) pos.push_back(0);  // all-PAD fallback: one PAD position
    return pos;
}

Matrix embed_inputs(const TransformerModel& model, const std::vector<int>& ids,
                    const std::vector<std::size_t>& positions) {
    const std::size_t d = model.hyper.dim;
    Matrix x(positions.size(), d);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const std::size_t p = positions[i];
        if (p >= ids.size() || p >= model.positional.rows)
            throw InvalidArgument("embed_inputs: position out of range");
        if (ids[p] < 0 ||
            static_cast<std::size_t>(ids[p]) >= model.embedding.vocab.size())
            throw InvalidArgument("embed_inputs: token id out of range");
        const double* e = model.embedding.row(ids[p]);
        const double* pe = model.positional.row(p);
        double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) r[j] = e[j] + pe[j];
    }
    return x;
}

ForwardTrace forward_from_input(const TransformerModel& model, const Matrix& x0,
                                bool training, std::mt19937_64* rng) {
    const std::size_t L = x0.rows;
    const std::size_t d = model.hyper.dim;
    const std::size_t heads = model.hyper.heads;
    const std::size_t dh = model.head_dim();
    if (x0.cols != d) throw InvalidArgument("forward: input feature size mismatch");
    const bool drop = training && model.hyper.dropout > 0.0;
    if (drop && rng == nullptr)
        throw InvalidArgument("forward: dropout requires an RNG in training mode");

    ForwardTrace tr;
    tr.x0 = x0;
    Matrix x = x0;

    for (const EncoderBlock& blk : model.blocks) {
        ForwardTrace::BlockTrace bt;
        bt.q = linear(x, blk.wq, blk.bq);
        bt.k = linear(x, blk.wk, blk.bk);
        bt.v = linear(x, blk.wv, blk.bv);

        bt.concat = Matrix(L, d);
        bt.attn.resize(heads);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            Matrix& a = bt.attn[h];
            a = Matrix(L, L);
            for (std::size_t i = 0; i < L; ++i) {
                for (std::size_t j = 0; j < L; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c)
                        s += bt.q.at(i, off + c) * bt.k.at(j, off + c);
                    a.at(i, j) = s * scale;
                }
                softmax_row_inplace(a.row(i), L);
            }
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t c = 0; c < dh; ++c) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < L; ++j)
                        s += a.at(i, j) * bt.v.at(j, off + c);
                    bt.concat.at(i, off + c) = s;
                }
        }

        bt.attn_out = linear(bt.concat, blk.wo, blk.bo);
        if (drop) dropout_inplace(bt.attn_out, model.hyper.dropout, *rng, bt.attn_drop);

        bt.r1 = x;
        for (std::size_t i = 0; i < bt.r1.data.size(); ++i)
            bt.r1.data[i] += bt.attn_out.data[i];
        layer_norm(bt.r1, blk.ln1_gamma, blk.ln1_beta, bt.x1_hat, bt.x1, bt.ln1_rstd);

        bt.ff_pre = linear(bt.x1, blk.ff_w1, blk.ff_b1);
        bt.ff_act = bt.ff_pre;
        for (double& v : bt.ff_act.data) v = std::max(0.0, v);
        bt.ff_out = linear(bt.ff_act, blk.ff_w2, blk.ff_b2);
        if (drop) dropout_inplace(bt.ff_out, model.hyper.dropout, *rng, bt.ff_drop);

        bt.r2 = bt.x1;
        for (std::size_t i = 0; i < bt.r2.data.size(); ++i)
            bt.r2.data[i] += bt.ff_out.data[i];
        layer_norm(bt.r2, blk.ln2_gamma, blk.ln2_beta, bt.x2_hat, bt.x2, bt.ln2_rstd);

        x = bt.x2;
        tr.block.push_back(std::move(bt));
    }

    tr.pooled.assign(d, 0.0);
    for (std::size_t p = 0; p < L; ++p) {
        const double* r = x.row(p);
        for (std::size_t j = 0; j < d; ++j) tr.pooled[j] += r[j];
    }
    for (double& v : tr.pooled) v /= static_cast<double>(L);

    tr.pred.logits = rowvec_mat(tr.pooled, model.head_w, model.head_b);
    tr.pred.probs = tr.pred.logits;
    softmax_row_inplace(tr.pred.probs.data(), tr.pred.probs.size());
    tr.pred.label = tr.pred.logits[0] >= tr.pred.logits[1] ? 0 : 1;
    return tr;
}

Prediction forward(const TransformerModel& model, const std::vector<int>& ids,
                   bool training, std::mt19937_64* rng) {
    if (ids.size() != model.hyper.max_seq)
        throw InvalidArgument("forward: id sequence length must equal max_seq");
    std::vector<std::size_t> pos = active_positions(ids);
    Matrix x0 = embed_inputs(model, ids, pos);
    ForwardTrace tr = forward_from_input(model, x0, training, rng);
    return tr.pred;
}

double focal_loss(const VecD& probs, int label, double alpha, double gamma) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
        throw InvalidArgument("focal_loss: label out of range");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= -1e-12 && p <= 1.0 + 1e-12))
            throw InvalidArgument("focal_loss: probabilities must lie in [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidArgument("focal_loss: probabilities must sum to 1");
    const double py = std::clamp(probs[static_cast<std::size_t>(label)], 1e-12, 1.0);
    return -alpha * std::pow(1.0 - py, gamma) * std::log(py);
}

}  // namespace faircert::lm
