#include <cmath>
#include <random>

#include "doctest.h"
#include "faircert/errors.hpp"
#include "faircert/verify.hpp"
#include "helpers.hpp"
#include "toy.hpp"

using namespace faircert;
using namespace faircert::verify;

TEST_SUITE_BEGIN("verify");

namespace {

/// Affine-only hand model: d = 1, no blocks, one token with embedding 2.0,
/// classifier [[1],[-1]] — margin under mean pooling is exactly 2x.
lm::TransformerModel affine_hand_model() {
    lm::Vocab v({"x"});
    embed::EmbeddingTable table(v, 1);
    table.weights.at(static_cast<std::size_t>(table.vocab.id("x")), 0) = 2.0;
    lm::ModelHyper hyper;
    hyper.dim = 1;
    hyper.heads = 1;
    hyper.ff_dim = 1;
    hyper.max_seq = 1;
    hyper.dropout = 0.0;
    lm::TransformerModel m = lm::TransformerModel::init(std::move(table), 0, hyper, 0);
    m.head_w = Matrix(1, 2);
    m.head_w.at(0, 0) = 1.0;
    m.head_w.at(0, 1) = -1.0;
    m.head_b = {0.0, 0.0};
    return m;
}

lm::TransformerModel small_random_model(std::size_t blocks, std::uint64_t seed,
                                        std::size_t max_seq = 6) {
    testutil::ToyTask task;
    lm::ModelHyper hyper;
    hyper.dim = 8;
    hyper.heads = 2;
    hyper.ff_dim = 8;
    hyper.max_seq = max_seq;
    hyper.dropout = 0.0;
    return lm::TransformerModel::init(task.make_table(8, seed), blocks, hyper,
                                      seed + 1);
}

/// Concrete prediction under a sampled in-ball perturbation of the embedding
/// rows at the perturbed positions.
int sample_prediction(const lm::TransformerModel& m, const std::vector<int>& ids,
                      double eps, std::mt19937_64& rng) {
    auto positions = lm::active_positions(ids);
    Matrix x0 = lm::embed_inputs(m, ids, positions);
    std::uniform_real_distribution<double> noise(-eps, eps);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (ids[positions[i]] == lm::Vocab::kPadId) continue;
        for (std::size_t j = 0; j < m.hyper.dim; ++j) x0.at(i, j) += noise(rng);
    }
    return lm::forward_from_input(m, x0).pred.label;
}

}  // namespace

TEST_CASE("analytic hand model: margins, radius, certification") {
    lm::TransformerModel m = affine_hand_model();
    const std::vector<int> ids = {m.embedding.vocab.id("x")};

    PerturbationSpec spec;
    spec.eps = 0.5;
    Certificate c1 = verify_at_radius(m, ids, spec);
    CHECK(c1.verified);
    CHECK(c1.predicted_label == 0);
    CHECK(c1.margin_lo == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(c1.margin_hi == doctest::Approx(5.0).epsilon(1e-12));

    spec.eps = 2.5;
    Certificate c2 = verify_at_radius(m, ids, spec);
    CHECK_FALSE(c2.verified);
    CHECK(c2.failure == FailureReason::MarginStraddlesZero);
    CHECK(c2.margin_lo == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(c2.margin_hi == doctest::Approx(9.0).epsilon(1e-12));

    RadiusResult r = max_verifiable_radius(m, ids, PerturbationSpec{});
    CHECK_FALSE(r.capped);
    CHECK_FALSE(r.none_found);
    CHECK(std::abs(r.eps_max - 2.0) <= 1e-6);
    CHECK(r.certificate.verified);

    // monotonicity: half the boundary radius verifies
    spec.eps = r.eps_max / 2.0;
    CHECK(verify_at_radius(m, ids, spec).verified);

    CHECK(certify_sentence(m, ids, 1.0).certified);
    CHECK_FALSE(certify_sentence(m, ids, 3.0).certified);
}

TEST_CASE("zero radius always verifies and matches the concrete margin") {
    for (std::size_t blocks : {std::size_t{1}, std::size_t{2}}) {
        lm::TransformerModel m = small_random_model(blocks, 100 + blocks);
        const std::vector<int> ids = {3, 7, 9, 4, 0, 0};

        PerturbationSpec spec;
        spec.eps = 0.0;
        Certificate c = verify_at_radius(m, ids, spec);
        CHECK(c.verified);

        lm::Prediction pred = lm::forward(m, ids);
        const double concrete_margin =
            pred.logits[static_cast<std::size_t>(pred.label)] -
            pred.logits[static_cast<std::size_t>(1 - pred.label)];
        CHECK(std::abs(c.margin_lo - concrete_margin) < 1e-9);
        CHECK(std::abs(c.margin_hi - concrete_margin) < 1e-9);
    }
}

TEST_CASE("abstract center at zero radius equals the concrete forward pass") {
    lm::TransformerModel m = small_random_model(2, 41);
    const std::vector<int> ids = {5, 2, 8, 0, 0, 0};
    PerturbationSpec spec;
    spec.eps = 0.0;
    zono::Zonotope out = propagate_logits(m, ids, spec);
    lm::Prediction pred = lm::forward(m, ids);
    CHECK(std::abs(out.center[0] - pred.logits[0]) < 1e-9);
    CHECK(std::abs(out.center[1] - pred.logits[1]) < 1e-9);
    // the abstract set is a point
    auto hull = zono::interval_hull(out);
    CHECK(hull.hi[0] - hull.lo[0] < 1e-9);
}

TEST_CASE("verified radii are sound under sampled perturbations") {
    std::mt19937_64 rng(77);
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        lm::TransformerModel m = small_random_model(1, seed);
        const std::vector<int> ids = {4, 9, 6, 11, 0, 0};

        RadiusResult r = max_verifiable_radius(m, ids, PerturbationSpec{});
        if (r.none_found) continue;  // nothing to check for this seed
        const int expected = r.certificate.predicted_label;
        int violations = 0;
        for (int s = 0; s < 2000; ++s)
            if (sample_prediction(m, ids, r.eps_max, rng) != expected) ++violations;
        CHECK(violations == 0);
    }
}

TEST_CASE("radius monotonicity on a real model") {
    lm::TransformerModel m = small_random_model(1, 19);
    const std::vector<int> ids = {4, 9, 6, 0, 0, 0};
    RadiusResult r = max_verifiable_radius(m, ids, PerturbationSpec{});
    if (!r.none_found) {
        PerturbationSpec spec;
        for (double f : {0.75, 0.5, 0.25, 0.1}) {
            spec.eps = r.eps_max * f;
            CHECK(verify_at_radius(m, ids, spec).verified);
        }
    }
}

TEST_CASE("single-token sentences certify and sample soundly") {
    lm::TransformerModel m = small_random_model(1, 37, 4);
    const std::vector<int> ids = {3, 0, 0, 0};  // attention over one position
    RadiusResult r = max_verifiable_radius(m, ids, PerturbationSpec{});
    REQUIRE_FALSE(r.none_found);
    CHECK(r.eps_max > 0.0);

    std::mt19937_64 rng(1);
    int bad = 0;
    for (int s = 0; s < 3000; ++s)
        if (sample_prediction(m, ids, r.eps_max, rng) !=
            r.certificate.predicted_label)
            ++bad;
    CHECK(bad == 0);

    // all-PAD sequences carry no perturbable positions: certified at the cap
    RadiusResult pad = max_verifiable_radius(m, {0, 0, 0, 0}, PerturbationSpec{});
    CHECK(pad.capped);
    CHECK(pad.eps_max == doctest::Approx(SearchParams{}.eps_cap));
}

TEST_CASE("perturbing no positions verifies out to the cap") {
    lm::TransformerModel m = small_random_model(1, 23);
    const std::vector<int> ids = {4, 9, 6, 0, 0, 0};
    PerturbationSpec spec;
    spec.positions = std::vector<std::size_t>{};  // perturb nothing
    RadiusResult r = max_verifiable_radius(m, ids, spec);
    CHECK(r.capped);
    CHECK(r.eps_max == doctest::Approx(SearchParams{}.eps_cap));
}

TEST_CASE("huge radii fail softly with a softmax domain reason") {
    lm::TransformerModel m = small_random_model(1, 29);
    const std::vector<int> ids = {4, 9, 6, 0, 0, 0};
    PerturbationSpec spec;
    spec.eps = 1e6;
    Certificate c = verify_at_radius(m, ids, spec);
    CHECK_FALSE(c.verified);
    CHECK(c.failure == FailureReason::SoftmaxDomainError);
}

TEST_CASE("threshold report takes the max over anchors") {
    lm::Vocab v({"a", "b", "c"});
    embed::EmbeddingTable t(v, 1);
    t.weights.at(static_cast<std::size_t>(v.id("a")), 0) = 0.0;
    t.weights.at(static_cast<std::size_t>(v.id("b")), 0) = 2e-4;
    t.weights.at(static_cast<std::size_t>(v.id("c")), 0) = 3e-4;
    // push specials far away so they do not enter the neighbor lists
    for (const char* sp : {"[PAD]", "[UNK]", "##"})
        t.weights.at(static_cast<std::size_t>(t.vocab.id(sp)), 0) = 100.0;

    ThresholdReport one = compute_threshold(t, {"a"}, 1);
    CHECK(one.d == doctest::Approx(2e-4));

    ThresholdReport both = compute_threshold(t, {"a", "b"}, 2);
    // a: neighbors {b@2e-4, c@3e-4} -> 3e-4; b: {c@1e-4, a@2e-4} -> 2e-4
    CHECK(both.d == doctest::Approx(3e-4));
    CHECK(both.per_anchor[0].second == doctest::Approx(3e-4));
    CHECK(both.per_anchor[1].second == doctest::Approx(2e-4));

    CHECK_THROWS_AS(compute_threshold(t, {"zzz"}, 1), NotFoundError);
}

TEST_CASE("fairness score arithmetic is exact") {
    CHECK_THROWS_AS(fairness_score({}), InvalidArgument);
    CHECK(fairness_score({true, true}) == 1.0);
    CHECK(fairness_score({false, false, false}) == 0.0);

    VecD radii(20, 5e-4);
    for (int i = 0; i < 16; ++i) radii[static_cast<std::size_t>(i)] = 1e-4;
    FairnessReport r = fairness_from_radii(radii, 3e-4);
    CHECK(r.certified_count == 4);
    CHECK(r.psi == 0.20);

    // recomputing psi from the per-sentence flags is idempotent
    std::vector<bool> flags;
    for (const auto& s : r.sentences) flags.push_back(s.certified);
    CHECK(fairness_score(flags) == r.psi);
}

TEST_CASE("brute force baseline behaviors") {
    lm::TransformerModel m = small_random_model(1, 31);
    const std::vector<int> ids = {4, 9, 6, 0, 0, 0};

    // no candidates: trivially true
    std::vector<std::vector<int>> none(ids.size());
    CHECK(brute_force_certify(m, ids, none));

    // a candidate with an identical embedding row never changes the result
    std::vector<std::vector<int>> dup(ids.size());
    dup[0] = {ids[0]};
    CHECK(brute_force_certify(m, ids, dup));

    // cap enforcement
    std::vector<std::vector<int>> big(ids.size());
    for (auto& cand : big) cand = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    CHECK_THROWS_AS(brute_force_certify(m, ids, big, 100), ResourceError);
}

TEST_CASE("certificates imply brute-force agreement on toy instances") {
    // Clone tokens with offsets <= D, certify at D, compare with exhaustive
    // substitution. One-sided: certified => brute force robust.
    const double offset = 1e-6;
    testutil::ToyTask task;
    lm::Vocab vocab = task.vocab;
    std::vector<int> clone_of;  // id of original token per clone
    std::vector<std::string> clone_names;
    for (int orig = 2; orig < 8; ++orig) {
        for (int k = 0; k < 2; ++k)
            clone_names.push_back("syn_" + std::to_string(orig) + "_" +
                                  std::to_string(k));
    }
    for (const std::string& n : clone_names) vocab.add(n);

    embed::EmbeddingTable table = embed::EmbeddingTable::random_init(vocab, 8, 55);
    for (double& w : table.weights.data) w *= 20.0;
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> delta(-offset, offset);
    clone_of.clear();
    for (int orig = 2; orig < 8; ++orig) {
        for (int k = 0; k < 2; ++k) {
            const std::string name =
                "syn_" + std::to_string(orig) + "_" + std::to_string(k);
            const int cid = vocab.id(name);
            for (std::size_t j = 0; j < 8; ++j)
                table.weights.at(static_cast<std::size_t>(cid), j) =
                    table.weights.at(static_cast<std::size_t>(orig), j) + delta(rng);
            clone_of.push_back(orig);
        }
    }

    lm::ModelHyper hyper;
    hyper.dim = 8;
    hyper.heads = 2;
    hyper.ff_dim = 8;
    hyper.max_seq = 6;
    hyper.dropout = 0.0;
    lm::TransformerModel m = lm::TransformerModel::init(std::move(table), 1, hyper, 91);

    int certified_cases = 0;
    for (int inst = 0; inst < 8; ++inst) {
        std::vector<int> ids = {2 + inst % 6, 3 + inst % 5, 4 + inst % 4,
                                2 + inst % 3, 0, 0};
        SentenceCertification sc = certify_sentence(m, ids, offset);
        if (!sc.certified) continue;
        ++certified_cases;

        std::vector<std::vector<int>> subs(ids.size());
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (ids[p] == 0) continue;
            for (std::size_t c = 0; c < clone_of.size(); ++c)
                if (clone_of[c] == ids[p])
                    subs[p].push_back(m.embedding.vocab.id(clone_names[c]));
        }
        CHECK(brute_force_certify(m, ids, subs));
    }
    MESSAGE("certified toy instances: ", certified_cases, "/8");
    CHECK(certified_cases > 0);
}

TEST_CASE("dataset verification is deterministic across thread counts") {
    lm::TransformerModel m = small_random_model(1, 61);
    std::vector<std::vector<int>> seqs = {
        {4, 9, 6, 0, 0, 0}, {3, 5, 7, 9, 0, 0}, {2, 2, 2, 0, 0, 0},
        {8, 7, 6, 5, 4, 3}};
    std::vector<std::vector<std::string>> toks(seqs.size());

    FairnessReport a = verify_dataset(m, seqs, toks, 1e-5, {}, {}, 1);
    FairnessReport b = verify_dataset(m, seqs, toks, 1e-5, {}, {}, 3);
    REQUIRE(a.sentences.size() == b.sentences.size());
    for (std::size_t i = 0; i < a.sentences.size(); ++i) {
        CHECK(a.sentences[i].eps_max == b.sentences[i].eps_max);
        CHECK(a.sentences[i].certified == b.sentences[i].certified);
    }
    CHECK(a.psi == b.psi);
}

TEST_SUITE_END();
