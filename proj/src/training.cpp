#include "faircert/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "faircert/errors.hpp"

namespace faircert::lm {

void TrainConfig::check() const {
    if (epochs <= 0) throw InvalidArgument("train config: epochs must be > 0");
    if (batch_size == 0) throw InvalidArgument("train config: batch size must be > 0");
    if (learning_rate <= 0.0) throw InvalidArgument("train config: learning rate must be > 0");
    if (weight_decay < 0.0) throw InvalidArgument("train config: weight decay must be >= 0");
    if (plateau.factor <= 0.0 || plateau.factor >= 1.0)
        throw InvalidArgument("train config: plateau factor must be in (0,1)");
    if (plateau.patience <= 0 || early_stop.patience <= 0)
        throw InvalidArgument("train config: patience must be > 0");
}

double PlateauScheduler::observe(double val_loss) {
    if (val_loss < best_) {
        best_ = val_loss;
        wait_ = 0;
    } else {
        ++wait_;
        if (wait_ >= cfg_.patience) {
            lr_ = std::max(cfg_.min_lr, lr_ * cfg_.factor);
            wait_ = 0;
        }
    }
    return lr_;
}

bool EarlyStopper::observe(double val_loss) {
    ++epoch_;
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch_;
        wait_ = 0;
        improved_ = true;
        return false;
    }
    improved_ = false;
    ++wait_;
    return wait_ >= patience_;
}

ModelGrads ModelGrads::zeros_like(const TransformerModel& m) {
    const std::size_t d = m.hyper.dim;
    const std::size_t f = m.hyper.ff_dim;
    ModelGrads g;
    g.block.resize(m.blocks.size());
    for (BlockGrads& b : g.block) {
        b.wq = Matrix(d, d);
        b.wk = Matrix(d, d);
        b.wv = Matrix(d, d);
        b.wo = Matrix(d, d);
        b.bq.assign(d, 0.0);
        b.bk.assign(d, 0.0);
        b.bv.assign(d, 0.0);
        b.bo.assign(d, 0.0);
        b.ln1_gamma.assign(d, 0.0);
        b.ln1_beta.assign(d, 0.0);
        b.ff_w1 = Matrix(d, f);
        b.ff_b1.assign(f, 0.0);
        b.ff_w2 = Matrix(f, d);
        b.ff_b2.assign(d, 0.0);
        b.ln2_gamma.assign(d, 0.0);
        b.ln2_beta.assign(d, 0.0);
    }
    g.head_w = Matrix(d, 2);
    g.head_b.assign(2, 0.0);
    return g;
}

void ModelGrads::scale(double s) {
    for (BlockGrads& b : block) {
        for (Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ff_w1, &b.ff_w2})
            for (double& x : m->data) x *= s;
        for (VecD* v : {&b.bq, &b.bk, &b.bv, &b.bo, &b.ln1_gamma, &b.ln1_beta,
                        &b.ff_b1, &b.ff_b2, &b.ln2_gamma, &b.ln2_beta})
            for (double& x : *v) x *= s;
    }
    for (double& x : head_w.data) x *= s;
    for (double& x : head_b) x *= s;
}

std::vector<std::span<double>> trainable_views(TransformerModel& m) {
    std::vector<std::span<double>> out;
    for (EncoderBlock& b : m.blocks) {
        for (Matrix* mat : {&b.wq, &b.wk, &b.wv, &b.wo})
            out.emplace_back(mat->data);
        for (VecD* v : {&b.bq, &b.bk, &b.bv, &b.bo, &b.ln1_gamma, &b.ln1_beta})
            out.emplace_back(*v);
        out.emplace_back(b.ff_w1.data);
        out.emplace_back(b.ff_b1);
        out.emplace_back(b.ff_w2.data);
        out.emplace_back(b.ff_b2);
        out.emplace_back(b.ln2_gamma);
        out.emplace_back(b.ln2_beta);
    }
    out.emplace_back(m.head_w.data);
    out.emplace_back(m.head_b);
    return out;
}

std::vector<std::span<double>> grad_views(ModelGrads& g) {
    std::vector<std::span<double>> out;
    for (ModelGrads::BlockGrads& b : g.block) {
        for (Matrix* mat : {&b.wq, &b.wk, &b.wv, &b.wo})
            out.emplace_back(mat->data);
        for (VecD* v : {&b.bq, &b.bk, &b.bv, &b.bo, &b.ln1_gamma, &b.ln1_beta})
            out.emplace_back(*v);
        out.emplace_back(b.ff_w1.data);
        out.emplace_back(b.ff_b1);
        out.emplace_back(b.ff_w2.data);
        out.emplace_back(b.ff_b2);
        out.emplace_back(b.ln2_gamma);
        out.emplace_back(b.ln2_beta);
    }
    out.emplace_back(g.head_w.data);
    out.emplace_back(g.head_b);
    return out;
}

VecD snapshot_trainable(const TransformerModel& m) {
    VecD snap;
    auto views = trainable_views(const_cast<TransformerModel&>(m));
    for (const auto& v : views) snap.insert(snap.end(), v.begin(), v.end());
    return snap;
}

void restore_trainable(TransformerModel& m, const VecD& snapshot) {
    std::size_t off = 0;
    for (auto& v : trainable_views(m)) {
        std::copy(snapshot.begin() + static_cast<long>(off),
                  snapshot.begin() + static_cast<long>(off + v.size()), v.begin());
        off += v.size();
    }
    if (off != snapshot.size())
        throw InvalidArgument("restore_trainable: snapshot size mismatch");
}

namespace {

// dr = layer-norm backward for one matrix given dy, caches and params.
void layer_norm_backward(const Matrix& dy, const Matrix& x_hat, const VecD& rstd,
                         const VecD& gamma, Matrix& dx, VecD& dgamma, VecD& dbeta) {
    const std::size_t d = dy.cols;
    dx = Matrix(dy.rows, d);
    for (std::size_t p = 0; p < dy.rows; ++p) {
        const double* dyr = dy.row(p);
        const double* xh = x_hat.row(p);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
        }
        VecD dxh(d);
        for (std::size_t j = 0; j < d; ++j) {
            dxh[j] = dyr[j] * gamma[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxr = dx.row(p);
        for (std::size_t j = 0; j < d; ++j)
            dxr[j] = rstd[p] * (dxh[j] - m1 - xh[j] * m2);
    }
}

// Accumulates dW += x^T dy, db += column sums of dy; returns dx = dy W^T.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy,
                       Matrix& dw, VecD& db) {
    for (std::size_t p = 0; p < x.rows; ++p) {
        const double* xr = x.row(p);
        const double* dyr = dy.row(p);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double xi = xr[i];
            if (xi != 0.0) {
                double* dwr = dw.row(i);
                for (std::size_t j = 0; j < w.cols; ++j) dwr[j] += xi * dyr[j];
            }
        }
        for (std::size_t j = 0; j < w.cols; ++j) db[j] += dyr[j];
    }
    Matrix dx(x.rows, w.rows);
    for (std::size_t p = 0; p < x.rows; ++p) {
        const double* dyr = dy.row(p);
        double* dxr = dx.row(p);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double* wr = w.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < w.cols; ++j) acc += dyr[j] * wr[j];
            dxr[i] = acc;
        }
    }
    return dx;
}

void apply_dropout_mask(Matrix& dy, const std::vector<char>& mask, double rate) {
    if (mask.empty() || rate <= 0.0) return;
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        dy.data[i] = mask[i] ? dy.data[i] * scale : 0.0;
}

}  // namespace

double backward_example(const TransformerModel& m, const ForwardTrace& tr,
                        int label, const FocalConfig& focal, ModelGrads& g) {
    const std::size_t d = m.hyper.dim;
    const std::size_t heads = m.hyper.heads;
    const std::size_t dh = m.head_dim();
    const std::size_t L = tr.x0.rows;

    const double loss = focal_loss(tr.pred.probs, label, focal.alpha, focal.gamma);

    // d(focal)/d(logits) through the softmax.
    const double py = std::clamp(tr.pred.probs[static_cast<std::size_t>(label)],
                                 1e-12, 1.0);
    const double one_minus = 1.0 - py;
    double dl_dpy = -focal.alpha * std::pow(one_minus, focal.gamma) / py;
    if (focal.gamma != 0.0)
        dl_dpy += focal.alpha * focal.gamma * std::pow(one_minus, focal.gamma - 1.0) *
                  std::log(py);
    VecD dlogits(2);
    for (std::size_t j = 0; j < 2; ++j) {
        const double indicator = (static_cast<int>(j) == label) ? 1.0 : 0.0;
        dlogits[j] = dl_dpy * py * (indicator - tr.pred.probs[j]);
    }

    // head
    VecD dpooled(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            g.head_w.at(i, j) += tr.pooled[i] * dlogits[j];
            dpooled[i] += m.head_w.at(i, j) * dlogits[j];
        }
    }
    for (std::size_t j = 0; j < 2; ++j) g.head_b[j] += dlogits[j];

    // mean pooling
    Matrix dx(L, d);
    for (std::size_t p = 0; p < L; ++p)
        for (std::size_t j = 0; j < d; ++j)
            dx.at(p, j) = dpooled[j] / static_cast<double>(L);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t bi = m.blocks.size(); bi-- > 0;) {
        const EncoderBlock& blk = m.blocks[bi];
        const ForwardTrace::BlockTrace& bt = tr.block[bi];
        ModelGrads::BlockGrads& gb = g.block[bi];
        const Matrix& x_in = (bi == 0) ? tr.x0 : tr.block[bi - 1].x2;

        // LN2
        Matrix dr2;
        layer_norm_backward(dx, bt.x2_hat, bt.ln2_rstd, blk.ln2_gamma, dr2,
                            gb.ln2_gamma, gb.ln2_beta);

        // feed-forward branch
        Matrix dffout = dr2;
        apply_dropout_mask(dffout, bt.ff_drop, m.hyper.dropout);
        Matrix dffact = linear_backward(bt.ff_act, blk.ff_w2, dffout, gb.ff_w2, gb.ff_b2);
        for (std::size_t i = 0; i < dffact.data.size(); ++i)
            if (bt.ff_pre.data[i] <= 0.0) dffact.data[i] = 0.0;
        Matrix dx1 = linear_backward(bt.x1, blk.ff_w1, dffact, gb.ff_w1, gb.ff_b1);
        for (std::size_t i = 0; i < dx1.data.size(); ++i) dx1.data[i] += dr2.data[i];

        // LN1
        Matrix dr1;
        layer_norm_backward(dx1, bt.x1_hat, bt.ln1_rstd, blk.ln1_gamma, dr1,
                            gb.ln1_gamma, gb.ln1_beta);

        Matrix dattn_out = dr1;
        apply_dropout_mask(dattn_out, bt.attn_drop, m.hyper.dropout);
        Matrix dconcat = linear_backward(bt.concat, blk.wo, dattn_out, gb.wo, gb.bo);

        Matrix dq(L, d), dk(L, d), dv(L, d);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const Matrix& a = bt.attn[h];

            // dA and dV from O = A V
            Matrix da(L, L);
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < L; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c)
                        acc += dconcat.at(i, off + c) * bt.v.at(j, off + c);
                    da.at(i, j) = acc;
                }
            for (std::size_t j = 0; j < L; ++j)
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < L; ++i)
                        acc += a.at(i, j) * dconcat.at(i, off + c);
                    dv.at(j, off + c) = acc;
                }

            // softmax rows
            Matrix ds(L, L);
            for (std::size_t i = 0; i < L; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < L; ++j) inner += da.at(i, j) * a.at(i, j);
                for (std::size_t j = 0; j < L; ++j)
                    ds.at(i, j) = a.at(i, j) * (da.at(i, j) - inner);
            }

            // scores = scale * Q K^T
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < L; ++j)
                        acc += ds.at(i, j) * bt.k.at(j, off + c);
                    dq.at(i, off + c) = acc * scale;
                }
            for (std::size_t j = 0; j < L; ++j)
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < L; ++i)
                        acc += ds.at(i, j) * bt.q.at(i, off + c);
                    dk.at(j, off + c) = acc * scale;
                }
        }

        Matrix dx_in = linear_backward(x_in, blk.wq, dq, gb.wq, gb.bq);
        Matrix dxk = linear_backward(x_in, blk.wk, dk, gb.wk, gb.bk);
        Matrix dxv = linear_backward(x_in, blk.wv, dv, gb.wv, gb.bv);
        for (std::size_t i = 0; i < dx_in.data.size(); ++i)
            dx_in.data[i] += dxk.data[i] + dxv.data[i] + dr1.data[i];
        dx = std::move(dx_in);
    }
    // dx now holds the gradient w.r.t. x0; the embedding is frozen, so it is
    // intentionally dropped here.
    return loss;
}

double model_batch_gradient(const TransformerModel& m,
                            const std::vector<EncodedExample>& batch,
                            const FocalConfig& focal, ModelGrads& g) {
    if (batch.empty()) throw InvalidArgument("model_batch_gradient: empty batch");
    double loss = 0.0;
    for (const EncodedExample& ex : batch) {
        auto positions = active_positions(ex.ids);
        Matrix x0 = embed_inputs(m, ex.ids, positions);
        ForwardTrace tr = forward_from_input(m, x0, false, nullptr);
        tr.positions = std::move(positions);
        loss += backward_example(m, tr, ex.label, focal, g);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    g.scale(inv);
    return loss * inv;
}

double evaluate_loss(const TransformerModel& m, const std::vector<EncodedExample>& set,
                     const FocalConfig& focal) {
    double loss = 0.0;
    for (const EncodedExample& ex : set)
        loss += focal_loss(forward(m, ex.ids).probs, ex.label, focal.alpha, focal.gamma);
    return loss / static_cast<double>(set.size());
}

double evaluate_accuracy(const TransformerModel& m,
                         const std::vector<EncodedExample>& set) {
    std::size_t correct = 0;
    for (const EncodedExample& ex : set)
        if (forward(m, ex.ids).label == ex.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train_model(TransformerModel& model,
                        const std::vector<EncodedExample>& train_set,
                        const std::vector<EncodedExample>& val_set,
                        const TrainConfig& cfg) {
    if (train_set.empty() || val_set.empty())
        throw InvalidArgument("train_model: datasets must be nonempty");
    if (!model.embedding_frozen)
        throw InvalidArgument("train_model: the embedding must be frozen");
    cfg.check();
    model.check_invariants();

    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    ModelGrads adam_m = ModelGrads::zeros_like(model);
    ModelGrads adam_v = ModelGrads::zeros_like(model);
    auto m_views = grad_views(adam_m);
    auto v_views = grad_views(adam_v);
    auto p_views = trainable_views(model);
    long step = 0;

    PlateauScheduler scheduler(cfg.learning_rate, cfg.plateau);
    EarlyStopper stopper(cfg.early_stop.patience);
    VecD best_snapshot = snapshot_trainable(model);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double lr = cfg.learning_rate;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double train_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            ModelGrads grads = ModelGrads::zeros_like(model);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const EncodedExample& ex = train_set[order[i]];
                auto positions = active_positions(ex.ids);
                Matrix x0 = embed_inputs(model, ex.ids, positions);
                ForwardTrace tr = forward_from_input(model, x0, true, &rng);
                batch_loss += backward_example(model, tr, ex.label, cfg.focal, grads);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            batch_loss *= inv;
            grads.scale(inv);
            if (!std::isfinite(batch_loss))
                throw NumericError("train_model: non-finite loss",
                                   static_cast<long>(batches));
            train_loss += batch_loss;
            ++batches;

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto g_views = grad_views(grads);
            for (std::size_t t = 0; t < p_views.size(); ++t) {
                auto& p = p_views[t];
                auto& gm = m_views[t];
                auto& gv = v_views[t];
                auto& gg = g_views[t];
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double grad = gg[i];
                    gm[i] = beta1 * gm[i] + (1.0 - beta1) * grad;
                    gv[i] = beta2 * gv[i] + (1.0 - beta2) * grad * grad;
                    const double mhat = gm[i] / bc1;
                    const double vhat = gv[i] / bc2;
                    // decoupled weight decay
                    p[i] -= lr * (mhat / (std::sqrt(vhat) + adam_eps) +
                                  cfg.weight_decay * p[i]);
                }
            }
        }

        EpochStats stats;
        stats.train_loss = train_loss / static_cast<double>(batches);
        stats.val_loss = evaluate_loss(model, val_set, cfg.focal);
        stats.val_accuracy = evaluate_accuracy(model, val_set);
        stats.learning_rate = lr;
        result.history.push_back(stats);

        const bool stop = stopper.observe(stats.val_loss);
        if (stopper.improved()) best_snapshot = snapshot_trainable(model);
        if (stop) break;
        lr = scheduler.observe(stats.val_loss);
    }

    result.best_epoch = stopper.best_epoch();
    if (cfg.early_stop.restore_best) restore_trainable(model, best_snapshot);
    return result;
}

}  // namespace faircert::lm
