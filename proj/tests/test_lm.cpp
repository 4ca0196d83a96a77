#include <cmath>
#include <random>

#include "doctest.h"
#include "faircert/errors.hpp"
#include "faircert/training.hpp"
#include "faircert/transformer.hpp"
#include "toy.hpp"

using namespace faircert;
using namespace faircert::lm;

TEST_SUITE_BEGIN("lm");

namespace {

TransformerModel tiny_model(std::size_t vocab_extra, std::size_t d, std::size_t heads,
                            std::size_t blocks, std::size_t max_seq,
                            std::uint64_t seed) {
    Vocab v;
    for (std::size_t i = 0; i < vocab_extra; ++i) v.add("w" + std::to_string(i));
    embed::EmbeddingTable table = embed::EmbeddingTable::random_init(v, d, seed);
    ModelHyper hyper;
    hyper.dim = d;
    hyper.heads = heads;
    hyper.ff_dim = d;
    hyper.max_seq = max_seq;
    hyper.dropout = 0.0;
    return TransformerModel::init(std::move(table), blocks, hyper, seed + 1);
}

}  // namespace

TEST_CASE("sinusoidal positional encoding starts at [0,1,0,1,...]") {
    Matrix p = sinusoidal_positional(4, 6);
    for (std::size_t j = 0; j < 6; ++j)
        CHECK(p.at(0, j) == doctest::Approx(j % 2 == 0 ? 0.0 : 1.0));
    // position 1, dim 0: sin(1)
    CHECK(p.at(1, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(p.at(1, 1) == doctest::Approx(std::cos(1.0)));
}

TEST_CASE("zeroed blocks and head weights give constant logits") {
    TransformerModel m = tiny_model(6, 4, 2, 2, 6, 3);
    for (auto& span : trainable_views(m))
        for (double& x : span) x = 0.0;
    // layer norms need their scale back to stay non-degenerate; the claim is
    // about W/b of attention, FF and head
    for (auto& b : m.blocks) {
        b.ln1_gamma.assign(4, 1.0);
        b.ln2_gamma.assign(4, 1.0);
    }
    m.head_b = {0.3, -0.3};

    std::vector<int> ids1 = {2, 3, 0, 0, 0, 0};
    std::vector<int> ids2 = {5, 4, 3, 2, 5, 4};
    Prediction p1 = forward(m, ids1);
    Prediction p2 = forward(m, ids2);
    CHECK(p1.logits[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(p1.logits[1] == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(p2.logits[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(p2.logits[1] == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(p1.label == 0);
}

TEST_CASE("probabilities sum to one and attention rows are stochastic") {
    TransformerModel m = tiny_model(10, 8, 2, 2, 8, 11);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> ids(8, 0);
        std::uniform_int_distribution<int> tok(2, static_cast<int>(m.embedding.vocab.size()) - 1);
        const int len = 1 + trial % 8;
        for (int i = 0; i < len; ++i) ids[static_cast<std::size_t>(i)] = tok(rng);

        auto positions = active_positions(ids);
        Matrix x0 = embed_inputs(m, ids, positions);
        ForwardTrace tr = forward_from_input(m, x0);
        CHECK(tr.pred.probs[0] + tr.pred.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(tr.pred.probs[0] >= 0.0);
        CHECK(tr.pred.probs[1] >= 0.0);

        for (const auto& bt : tr.block)
            for (const Matrix& a : bt.attn)
                for (std::size_t i = 0; i < a.rows; ++i) {
                    double sum = 0.0;
                    for (std::size_t j = 0; j < a.cols; ++j) {
                        CHECK(a.at(i, j) >= 0.0);
                        sum += a.at(i, j);
                    }
                    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
                }
    }
}

TEST_CASE("appending PAD tokens never changes logits") {
    TransformerModel m = tiny_model(8, 4, 2, 1, 10, 5);
    std::vector<int> short_ids = {2, 3, 4, 0, 0, 0, 0, 0, 0, 0};
    std::vector<int> same_ids = {2, 3, 4, 0, 0, 0, 0, 0, 0, 0};
    Prediction a = forward(m, short_ids);
    Prediction b = forward(m, same_ids);
    CHECK(a.logits == b.logits);

    // all-PAD input is total and deterministic
    Prediction pad = forward(m, std::vector<int>(10, 0));
    CHECK(std::isfinite(pad.logits[0]));
    CHECK(std::isfinite(pad.logits[1]));

    CHECK_THROWS_AS(forward(m, {1, 2, 3}), InvalidArgument);
}

TEST_CASE("focal loss values and cross-entropy degeneration") {
    CHECK(focal_loss({1.0, 0.0}, 0, 0.25, 2.0) == 0.0);
    const double want = 0.25 * 0.25 * std::log(2.0);
    CHECK(std::abs(focal_loss({0.5, 0.5}, 0, 0.25, 2.0) - want) < 1e-12);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    for (int i = 0; i < 100; ++i) {
        const double p = u(rng);
        const int y = i % 2;
        const double py = y == 0 ? p : 1.0 - p;
        const double ce = -std::log(py);
        CHECK(std::abs(focal_loss({p, 1.0 - p}, y, 1.0, 0.0) - ce) < 1e-12);
    }

    CHECK_THROWS_AS(focal_loss({0.7, 0.7}, 0, 1.0, 2.0), InvalidArgument);
    CHECK_THROWS_AS(focal_loss({1.4, -0.4}, 0, 1.0, 2.0), InvalidArgument);
}

TEST_CASE("full-model gradients match central finite differences") {
    // tiny configuration: vocab 12, d = 4, h = 2, 1 block, seq 4
    TransformerModel m = tiny_model(12, 4, 2, 1, 4, 21);
    std::vector<EncodedExample> batch = {
        {0, {2, 5, 7, 0}},
        {1, {9, 3, 0, 0}},
        {0, {4, 4, 11, 6}},
        {1, {8, 2, 10, 0}},
    };
    FocalConfig focal;  // alpha 0.25, gamma 2

    ModelGrads grads = ModelGrads::zeros_like(m);
    model_batch_gradient(m, batch, focal, grads);

    auto p_views = trainable_views(m);
    auto g_views = grad_views(grads);
    REQUIRE(p_views.size() == g_views.size());

    const double h = 1e-5;
    std::size_t checked = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < p_views.size(); ++t) {
        REQUIRE(p_views[t].size() == g_views[t].size());
        for (std::size_t i = 0; i < p_views[t].size(); ++i) {
            double& w = p_views[t][i];
            const double orig = w;
            w = orig + h;
            ModelGrads dummy = ModelGrads::zeros_like(m);
            const double lp = model_batch_gradient(m, batch, focal, dummy);
            w = orig - h;
            dummy = ModelGrads::zeros_like(m);
            const double lm = model_batch_gradient(m, batch, focal, dummy);
            w = orig;

            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = g_views[t][i];
            const double rel = std::abs(numeric - analytic) /
                               std::max(1e-6, std::abs(numeric) + std::abs(analytic));
            worst = std::max(worst, rel);
            ++checked;
            CHECK(rel < 1e-3);
        }
    }
    CHECK(checked > 100);
    MESSAGE("checked ", checked, " parameters, worst relative error ", worst);
}

TEST_CASE("plateau scheduler halves the rate after patience non-improving epochs") {
    PlateauScheduler s(1e-3, PlateauConfig{0.5, 3, 1e-6});
    CHECK(s.observe(1.0) == 1e-3);  // first observation sets the best
    CHECK(s.observe(1.1) == 1e-3);  // wait 1
    CHECK(s.observe(1.1) == 1e-3);  // wait 2
    CHECK(s.observe(1.1) == doctest::Approx(5e-4));  // wait 3 -> reduce
    // improvement resets
    CHECK(s.observe(0.5) == doctest::Approx(5e-4));
    CHECK(s.observe(0.6) == doctest::Approx(5e-4));

    // floor at min_lr
    PlateauScheduler f(2e-6, PlateauConfig{0.5, 1, 1e-6});
    f.observe(1.0);
    CHECK(f.observe(2.0) == doctest::Approx(1e-6));
    CHECK(f.observe(2.0) == doctest::Approx(1e-6));
}

TEST_CASE("early stopper tracks the best epoch and stops after patience") {
    EarlyStopper e(3);
    CHECK_FALSE(e.observe(1.0));  // epoch 0, best
    CHECK_FALSE(e.observe(0.8));  // epoch 1, best
    CHECK_FALSE(e.observe(0.9));
    CHECK_FALSE(e.observe(0.9));
    CHECK(e.observe(0.9));  // third consecutive non-improvement
    CHECK(e.best_epoch() == 1);
}

TEST_CASE("training freezes the embedding and is deterministic") {
    testutil::ToyTask task;
    embed::EmbeddingTable table = task.make_table(8, 17);
    const VecD frozen_weights = table.weights.data;

    ModelHyper hyper;
    hyper.dim = 8;
    hyper.heads = 2;
    hyper.ff_dim = 8;
    hyper.max_seq = 8;
    hyper.dropout = 0.1;

    auto train_set = task.make_set(30, hyper.max_seq, 1);
    auto val_set = task.make_set(10, hyper.max_seq, 2);

    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.seed = 9;

    TransformerModel m1 = TransformerModel::init(table, 1, hyper, 23);
    TrainResult r1 = train_model(m1, train_set, val_set, cfg);

    // frozen-embedding contract: bit-identical rows
    CHECK(m1.embedding.weights.data == frozen_weights);
    CHECK(r1.history.size() >= 1);
    CHECK(r1.history.back().val_accuracy >= 0.95);

    TransformerModel m2 = TransformerModel::init(table, 1, hyper, 23);
    TrainResult r2 = train_model(m2, train_set, val_set, cfg);
    CHECK(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
    }
    CHECK(snapshot_trainable(m1) == snapshot_trainable(m2));
}

TEST_SUITE_END();
