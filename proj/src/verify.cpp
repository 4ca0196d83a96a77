#include "faircert/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "faircert/errors.hpp"
#include "json.hpp"

namespace faircert::verify {

using zono::Zonotope;

const char* to_string(FailureReason r) {
    switch (r) {
        case FailureReason::None: return "";
        case FailureReason::MarginStraddlesZero: return "margin-straddles-zero";
        case FailureReason::SoftmaxDomainError: return "softmax-domain-error";
    }
    return "";
}

namespace {

// Exact scalar scaling.
Zonotope scale(const Zonotope& z, double s) {
    Zonotope out = z;
    for (double& c : out.center) c *= s;
    for (double& g : out.gens.data) g *= s;
    return out;
}

// Exact per-position application of y = x·W + b to a position-major zonotope
// (L blocks of `in` dims each).
Zonotope per_position_affine(const Zonotope& z, std::size_t L, const Matrix& w,
                             const VecD& b) {
    const std::size_t in = w.rows;
    const std::size_t out_dim = w.cols;
    const std::size_t q = z.symbols();
    Zonotope out{VecD(L * out_dim), Matrix(L * out_dim, q)};
    for (std::size_t p = 0; p < L; ++p) {
        for (std::size_t j = 0; j < out_dim; ++j) {
            const std::size_t o = p * out_dim + j;
            double c = b[j];
            double* gout = out.gens.row(o);
            for (std::size_t i = 0; i < in; ++i) {
                const double wij = w.at(i, j);
                if (wij == 0.0) continue;
                const std::size_t src = p * in + i;
                c += wij * z.center[src];
                const double* gin = z.gens.row(src);
                for (std::size_t k = 0; k < q; ++k) gout[k] += wij * gin[k];
            }
            out.center[o] = c;
        }
    }
    return out;
}

// Sound layer-norm enclosure of one position (d dims): mean subtraction and
// scaling are exact affine maps, the square is the bilinear rule, and
// 1/sqrt(var + eps) goes through the Sqrt and Reciprocal enclosures. The
// variance hull is intersected with [0, ∞) first (true variances are
// nonnegative), which keeps Sqrt defined at any radius.
Zonotope layer_norm_enclose(const Zonotope& zpos, const VecD& gamma, const VecD& beta,
                            double delta_pos) {
    const std::size_t d = zpos.dim();
    Matrix center_sub(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            center_sub.at(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(d);
    Zonotope xc = zono::affine(zpos, center_sub, VecD(d, 0.0));

    Zonotope sq = zono::multiply_elementwise(xc, xc);
    Matrix mean_row(1, d);
    for (std::size_t j = 0; j < d; ++j) mean_row.at(0, j) = 1.0 / static_cast<double>(d);
    Zonotope var = zono::affine(sq, mean_row, VecD(1, lm::kLayerNormEps));

    const auto var_hull = zono::interval_hull(var);
    if (var_hull.lo[0] < lm::kLayerNormEps)
        var = zono::tighten_dims_to_box(var, VecD(1, lm::kLayerNormEps),
                                        VecD(1, std::max(var_hull.hi[0],
                                                         lm::kLayerNormEps)));

    Zonotope s = zono::enclose_elementwise(var, zono::ActivationKind::Sqrt, delta_pos);
    Zonotope r = zono::enclose_elementwise(s, zono::ActivationKind::Reciprocal,
                                           delta_pos);

    Matrix ones_col(d, 1);
    for (std::size_t i = 0; i < d; ++i) ones_col.at(i, 0) = 1.0;
    Zonotope rb = zono::affine(r, ones_col, VecD(d, 0.0));

    Zonotope y = zono::multiply_elementwise(zono::pad_symbols(xc, rb.symbols()), rb);

    Matrix gmat(d, d);
    for (std::size_t i = 0; i < d; ++i) gmat.at(i, i) = gamma[i];
    return zono::affine(y, gmat, beta);
}

std::vector<std::size_t> head_rows(std::size_t L, std::size_t d, std::size_t off,
                                   std::size_t dh) {
    std::vector<std::size_t> rows;
    rows.reserve(L * dh);
    for (std::size_t p = 0; p < L; ++p)
        for (std::size_t c = 0; c < dh; ++c) rows.push_back(p * d + off + c);
    return rows;
}

}  // namespace

Zonotope propagate_logits(const lm::TransformerModel& model,
                          const std::vector<int>& ids, const PerturbationSpec& spec) {
    if (ids.size() != model.hyper.max_seq)
        throw InvalidArgument("propagate_logits: id length must equal max_seq");
    if (spec.eps < 0.0) throw InvalidArgument("propagate_logits: eps must be >= 0");

    const std::size_t d = model.hyper.dim;
    const std::size_t heads = model.hyper.heads;
    const std::size_t dh = model.head_dim();
    const std::vector<std::size_t> positions = lm::active_positions(ids);
    const std::size_t L = positions.size();
    const Matrix x0 = lm::embed_inputs(model, ids, positions);

    // Which compacted positions carry noise symbols.
    std::vector<std::size_t> perturbed;
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t orig = positions[i];
        if (ids[orig] == lm::Vocab::kPadId) continue;  // PAD rows stay constant
        if (!spec.positions ||
            std::find(spec.positions->begin(), spec.positions->end(), orig) !=
                spec.positions->end())
            perturbed.push_back(i);
    }

    const std::size_t n = L * d;
    Zonotope z{VecD(n), Matrix(n, perturbed.size() * d)};
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) z.center[i * d + j] = x0.at(i, j);
    for (std::size_t pi = 0; pi < perturbed.size(); ++pi)
        for (std::size_t j = 0; j < d; ++j)
            z.gens.at(perturbed[pi] * d + j, pi * d + j) = spec.eps;

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (const lm::EncoderBlock& blk : model.blocks) {
        const std::size_t q_x = z.symbols();
        Zonotope q_full = per_position_affine(z, L, blk.wq, blk.bq);
        Zonotope k_full = per_position_affine(z, L, blk.wk, blk.bk);
        Zonotope v_full = per_position_affine(z, L, blk.wv, blk.bv);

        std::vector<Zonotope> head_out;
        head_out.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            Zonotope qh = zono::select_rows(q_full, head_rows(L, d, off, dh));

            // K^T layout: (c, p) row-major.
            std::vector<std::size_t> kt_rows;
            kt_rows.reserve(dh * L);
            for (std::size_t c = 0; c < dh; ++c)
                for (std::size_t p = 0; p < L; ++p) kt_rows.push_back(p * d + off + c);
            Zonotope kt = zono::select_rows(k_full, kt_rows);

            Zonotope scores = scale(zono::matmul_zz(qh, L, dh, kt, L), inv_sqrt_dh);

            const std::size_t q_scores = scores.symbols();
            std::vector<Zonotope> rows;
            rows.reserve(L);
            for (std::size_t i = 0; i < L; ++i) {
                std::vector<std::size_t> idx(L);
                for (std::size_t j = 0; j < L; ++j) idx[j] = i * L + j;
                rows.push_back(
                    zono::softmax_enclose(zono::select_rows(scores, idx), spec.delta_pos));
            }
            Zonotope attn = zono::stack_rows(rows, q_scores);

            Zonotope vh = zono::pad_symbols(
                zono::select_rows(v_full, head_rows(L, d, off, dh)), attn.symbols());
            head_out.push_back(zono::matmul_zz(attn, L, L, vh, dh));
        }

        Zonotope stacked = zono::stack_rows(head_out, q_x);
        std::vector<std::size_t> perm(L * d);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t p = 0; p < L; ++p)
                for (std::size_t c = 0; c < dh; ++c)
                    perm[p * d + h * dh + c] = h * L * dh + p * dh + c;
        Zonotope concat = zono::select_rows(stacked, perm);

        Zonotope attn_out = per_position_affine(concat, L, blk.wo, blk.bo);
        Zonotope r1 = zono::add_dependent(zono::pad_symbols(z, attn_out.symbols()),
                                          attn_out);

        const std::size_t q_r1 = r1.symbols();
        std::vector<Zonotope> ln1_parts;
        ln1_parts.reserve(L);
        for (std::size_t p = 0; p < L; ++p) {
            std::vector<std::size_t> idx(d);
            for (std::size_t j = 0; j < d; ++j) idx[j] = p * d + j;
            ln1_parts.push_back(layer_norm_enclose(zono::select_rows(r1, idx),
                                                   blk.ln1_gamma, blk.ln1_beta,
                                                   spec.delta_pos));
        }
        Zonotope x1 = zono::stack_rows(ln1_parts, q_r1);

        Zonotope pre = per_position_affine(x1, L, blk.ff_w1, blk.ff_b1);
        Zonotope act = zono::enclose_elementwise(pre, zono::ActivationKind::ReLU);
        Zonotope ff_out = per_position_affine(act, L, blk.ff_w2, blk.ff_b2);
        Zonotope r2 = zono::add_dependent(zono::pad_symbols(x1, ff_out.symbols()),
                                          ff_out);

        const std::size_t q_r2 = r2.symbols();
        std::vector<Zonotope> ln2_parts;
        ln2_parts.reserve(L);
        for (std::size_t p = 0; p < L; ++p) {
            std::vector<std::size_t> idx(d);
            for (std::size_t j = 0; j < d; ++j) idx[j] = p * d + j;
            ln2_parts.push_back(layer_norm_enclose(zono::select_rows(r2, idx),
                                                   blk.ln2_gamma, blk.ln2_beta,
                                                   spec.delta_pos));
        }
        z = zono::stack_rows(ln2_parts, q_r2);
        z = zono::reduce_order(z, std::max(n, spec.order_cap_multiplier * n));
    }

    Matrix pool(d, n);
    for (std::size_t p = 0; p < L; ++p)
        for (std::size_t j = 0; j < d; ++j)
            pool.at(j, p * d + j) = 1.0 / static_cast<double>(L);
    Zonotope pooled = zono::affine(z, pool, VecD(d, 0.0));

    Matrix head(2, d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < 2; ++k) head.at(k, j) = model.head_w.at(j, k);
    return zono::affine(pooled, head, model.head_b);
}

Certificate verify_at_radius(const lm::TransformerModel& model,
                             const std::vector<int>& ids,
                             const PerturbationSpec& spec) {
    Certificate cert;
    cert.eps = spec.eps;
    cert.predicted_label = lm::forward(model, ids).label;

    try {
        const Zonotope out = propagate_logits(model, ids, spec);
        const std::size_t q = out.symbols();
        const std::size_t pred = static_cast<std::size_t>(cert.predicted_label);

        // Pairwise margin against every rival label; verified iff the worst
        // lower bound is strictly positive.
        double lo_min = std::numeric_limits<double>::infinity();
        double hi_at_min = std::numeric_limits<double>::infinity();
        for (std::size_t rival = 0; rival < out.dim(); ++rival) {
            if (rival == pred) continue;
            const double c = out.center[pred] - out.center[rival];
            double radius = 0.0;
            const double* gp = out.gens.row(pred);
            const double* gr = out.gens.row(rival);
            for (std::size_t k = 0; k < q; ++k) radius += std::abs(gp[k] - gr[k]);
            if (c - radius < lo_min) {
                lo_min = c - radius;
                hi_at_min = c + radius;
            }
        }
        cert.margin_lo = lo_min;
        cert.margin_hi = hi_at_min;
        cert.verified = lo_min > 0.0;
        if (!cert.verified) cert.failure = FailureReason::MarginStraddlesZero;
    } catch (const DomainError&) {
        cert.verified = false;
        cert.failure = FailureReason::SoftmaxDomainError;
        cert.margin_lo = -std::numeric_limits<double>::infinity();
        cert.margin_hi = std::numeric_limits<double>::infinity();
    }
    return cert;
}

RadiusResult max_verifiable_radius(const lm::TransformerModel& model,
                                   const std::vector<int>& ids,
                                   const PerturbationSpec& base,
                                   const SearchParams& search) {
    PerturbationSpec spec = base;
    auto check = [&](double eps) {
        spec.eps = eps;
        return verify_at_radius(model, ids, spec);
    };

    RadiusResult result;
    double lo = 0.0, hi = 0.0;
    Certificate lo_cert;

    Certificate first = check(std::min(search.eps_hi_init, search.eps_cap));
    if (first.verified) {
        lo = std::min(search.eps_hi_init, search.eps_cap);
        lo_cert = first;
        while (true) {
            const double next = lo * search.growth;
            if (next > search.eps_cap) {
                Certificate cap_cert = check(search.eps_cap);
                if (cap_cert.verified) {
                    result.eps_max = search.eps_cap;
                    result.capped = true;
                    result.certificate = cap_cert;
                    return result;
                }
                hi = search.eps_cap;
                break;
            }
            Certificate cert = check(next);
            if (cert.verified) {
                lo = next;
                lo_cert = cert;
            } else {
                hi = next;
                break;
            }
        }
    } else {
        // Shrink toward zero looking for any verifiable radius.
        double eps = search.eps_hi_init;
        bool found = false;
        for (int k = 0; k < 20 && !found; ++k) {
            eps *= 0.5;
            Certificate cert = check(eps);
            if (cert.verified) {
                lo = eps;
                hi = eps * 2.0;
                lo_cert = cert;
                found = true;
            }
        }
        if (!found) {
            result.eps_max = 0.0;
            result.none_found = true;
            result.certificate = first;
            return result;
        }
    }

    while (hi - lo > search.abs_tol) {
        const double mid = 0.5 * (lo + hi);
        Certificate cert = check(mid);
        if (cert.verified) {
            lo = mid;
            lo_cert = cert;
        } else {
            hi = mid;
        }
    }
    result.eps_max = lo;
    result.certificate = lo_cert;
    return result;
}

ThresholdReport compute_threshold(const embed::EmbeddingTable& table,
                                  const std::vector<std::string>& anchors,
                                  std::size_t k) {
    if (anchors.empty()) throw InvalidArgument("compute_threshold: no anchors");
    ThresholdReport report;
    for (const std::string& a : anchors) {
        const embed::NeighborSet ns = embed::nearest_neighbors(table, a, k);
        double worst = 0.0;
        for (const auto& [tok, dist] : ns.neighbors) worst = std::max(worst, dist);
        report.per_anchor.emplace_back(a, worst);
        report.d = std::max(report.d, worst);
    }
    return report;
}

SentenceCertification certify_sentence(const lm::TransformerModel& model,
                                       const std::vector<int>& ids, double d,
                                       const PerturbationSpec& base,
                                       const SearchParams& search) {
    if (d < 0.0) throw InvalidArgument("certify_sentence: D must be >= 0");
    SentenceCertification out;
    out.radius = max_verifiable_radius(model, ids, base, search);
    out.d_required = d;
    out.certified = d <= out.radius.eps_max;
    return out;
}

double fairness_score(const std::vector<bool>& certified) {
    if (certified.empty()) throw InvalidArgument("fairness_score: empty certificate list");
    std::size_t count = 0;
    for (bool c : certified)
        if (c) ++count;
    return static_cast<double>(count) / static_cast<double>(certified.size());
}

FairnessReport fairness_from_radii(const VecD& radii, double d) {
    if (radii.empty()) throw InvalidArgument("fairness_from_radii: empty radius list");
    FairnessReport report;
    report.threshold_d = d;
    std::vector<bool> flags;
    flags.reserve(radii.size());
    for (std::size_t i = 0; i < radii.size(); ++i) {
        FairnessReport::Sentence s;
        s.index = i;
        s.eps_max = radii[i];
        s.certified = d <= radii[i];
        if (s.certified) ++report.certified_count;
        flags.push_back(s.certified);
        report.sentences.push_back(std::move(s));
    }
    report.psi = fairness_score(flags);
    return report;
}

bool brute_force_certify(const lm::TransformerModel& model,
                         const std::vector<int>& ids,
                         const std::vector<std::vector<int>>& substitutions,
                         std::uint64_t cap) {
    if (substitutions.size() != ids.size())
        throw InvalidArgument("brute_force_certify: substitution list length mismatch");

    // Option sets: the original id plus candidates with distinct embedding
    // rows (duplicates of an existing option shrink the combination count).
    auto same_row = [&](int a, int b) {
        const double* ra = model.embedding.row(a);
        const double* rb = model.embedding.row(b);
        for (std::size_t j = 0; j < model.embedding.dim; ++j)
            if (ra[j] != rb[j]) return false;
        return true;
    };
    std::vector<std::vector<int>> options(ids.size());
    std::uint64_t combos = 1;
    for (std::size_t p = 0; p < ids.size(); ++p) {
        options[p].push_back(ids[p]);
        for (int cand : substitutions[p]) {
            bool dup = false;
            for (int existing : options[p])
                if (cand == existing || same_row(cand, existing)) {
                    dup = true;
                    break;
                }
            if (!dup) options[p].push_back(cand);
        }
        if (combos > cap / options[p].size())
            throw ResourceError("brute_force_certify: combination count exceeds cap");
        combos *= options[p].size();
    }

    const int baseline = lm::forward(model, ids).label;
    std::vector<std::size_t> odometer(ids.size(), 0);
    std::vector<int> current = ids;
    while (true) {
        for (std::size_t p = 0; p < ids.size(); ++p) current[p] = options[p][odometer[p]];
        if (lm::forward(model, current).label != baseline) return false;

        std::size_t p = 0;
        while (p < odometer.size()) {
            if (++odometer[p] < options[p].size()) break;
            odometer[p] = 0;
            ++p;
        }
        if (p == odometer.size()) break;
    }
    return true;
}

FairnessReport verify_dataset(const lm::TransformerModel& model,
                              const std::vector<std::vector<int>>& sequences,
                              const std::vector<std::vector<std::string>>& tokens,
                              double threshold_d, const PerturbationSpec& base,
                              const SearchParams& search, unsigned threads) {
    if (sequences.empty()) throw InvalidArgument("verify_dataset: no sentences");
    const std::size_t n = sequences.size();
    std::vector<RadiusResult> radii(n);

    auto worker = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < n; i += stride)
            radii[i] = max_verifiable_radius(model, sequences[i], base, search);
    };
    if (threads <= 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
        for (std::thread& t : pool) t.join();
    }

    FairnessReport report;
    report.threshold_d = threshold_d;
    std::vector<bool> flags(n);
    for (std::size_t i = 0; i < n; ++i) {
        FairnessReport::Sentence s;
        s.index = i;
        if (i < tokens.size()) s.tokens = tokens[i];
        s.eps_max = radii[i].eps_max;
        s.capped = radii[i].capped;
        s.certified = threshold_d <= radii[i].eps_max;
        if (radii[i].none_found)
            s.failure = to_string(radii[i].certificate.failure);
        const lm::Prediction pred = lm::forward(model, sequences[i]);
        s.margin_at_zero = pred.logits[static_cast<std::size_t>(pred.label)] -
                           pred.logits[static_cast<std::size_t>(1 - pred.label)];
        flags[i] = s.certified;
        if (s.certified) ++report.certified_count;
        report.sentences.push_back(std::move(s));
    }
    report.psi = fairness_score(flags);
    return report;
}

void write_report_json(const FairnessReport& report, const std::string& path) {
    nlohmann::json doc;
    doc["schema"] = "faircert-report/1";
    doc["threshold_d"] = report.threshold_d;
    doc["sentence_count"] = report.sentences.size();
    doc["certified_count"] = report.certified_count;
    doc["fairness_score"] = report.psi;
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& s : report.sentences) {
        nlohmann::json js;
        js["index"] = s.index;
        js["tokens"] = s.tokens;
        js["eps_max"] = s.eps_max;
        js["capped"] = s.capped;
        js["margin_at_zero"] = s.margin_at_zero;
        js["certified"] = s.certified;
        js["failure"] = s.failure;
        sentences.push_back(std::move(js));
    }
    doc["sentences"] = std::move(sentences);
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    out << doc.dump(1) << '\n';
}

void write_radar_csv(const FairnessReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    out << "sentence_index,eps_max,threshold_D,certified\n";
    out.precision(17);
    for (const auto& s : report.sentences)
        out << s.index << ',' << s.eps_max << ',' << report.threshold_d << ','
            << (s.certified ? 1 : 0) << '\n';
}

}  // namespace faircert::verify
