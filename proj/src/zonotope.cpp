#include "faircert/zonotope.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faircert/errors.hpp"

namespace faircert::zono {

namespace {

// Relative slack applied to inexact enclosure error magnitudes so that
// concrete samples stay inside hulls despite rounding. Exact paths
// (identity, point evaluation) carry no slack.
constexpr double kErrSlack = 1e-12;

double row_abs_sum(const Matrix& g, std::size_t i) {
    const double* r = g.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < g.cols; ++j) s += std::abs(r[j]);
    return s;
}

struct Relaxation {
    double lambda;  // slope
    double mu;      // offset
    double err;     // fresh generator magnitude, >= 0
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double dsigmoid(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}
double dtanh(double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
}

// S-shaped curves: λ = min slope at the endpoints, so the residual
// f(x) − λx is nondecreasing on [l, u] and the band is pinned at the ends.
Relaxation relax_s_shaped(double l, double u, double fl, double fu,
                          double dl, double du) {
    const double lambda = std::min(dl, du);
    const double rl = fl - lambda * l;
    const double ru = fu - lambda * u;
    double err = 0.5 * (ru - rl);
    err = std::max(0.0, err) * (1.0 + kErrSlack);
    return {lambda, 0.5 * (rl + ru), err};
}

// Convex f with chord slope: residual maxima sit at the endpoints, the
// minimum at the interior tangency point x_star (when inside [l, u]).
Relaxation relax_convex_chord(double l, double u, double fl, double fu,
                              double x_star, double f_star) {
    const double lambda = (fu - fl) / (u - l);
    const double rmax = std::max(fl - lambda * l, fu - lambda * u);
    double rmin;
    if (x_star > l && x_star < u)
        rmin = f_star - lambda * x_star;
    else
        rmin = std::min(fl - lambda * l, fu - lambda * u);
    double err = 0.5 * (rmax - rmin);
    err = std::max(0.0, err) * (1.0 + kErrSlack);
    return {lambda, 0.5 * (rmax + rmin), err};
}

// Concave mirror of the convex case.
Relaxation relax_concave_chord(double l, double u, double fl, double fu,
                               double x_star, double f_star) {
    const double lambda = (fu - fl) / (u - l);
    const double rmin = std::min(fl - lambda * l, fu - lambda * u);
    double rmax;
    if (x_star > l && x_star < u)
        rmax = f_star - lambda * x_star;
    else
        rmax = std::max(fl - lambda * l, fu - lambda * u);
    double err = 0.5 * (rmax - rmin);
    err = std::max(0.0, err) * (1.0 + kErrSlack);
    return {lambda, 0.5 * (rmax + rmin), err};
}

double eval_activation(ActivationKind f, double x) {
    switch (f) {
        case ActivationKind::ReLU: return x > 0.0 ? x : 0.0;
        case ActivationKind::Tanh: return std::tanh(x);
        case ActivationKind::Sigmoid: return sigmoid(x);
        case ActivationKind::Exp: return std::exp(x);
        case ActivationKind::Reciprocal: return 1.0 / x;
        case ActivationKind::Sqrt: return std::sqrt(x);
    }
    return 0.0;
}

Relaxation relax_dimension(ActivationKind f, double l, double u,
                           double delta_pos, std::size_t dim) {
    if (f == ActivationKind::Reciprocal || f == ActivationKind::Sqrt) {
        if (!(l > delta_pos))
            throw DomainError(std::string(to_string(f)) +
                                  " enclosure needs a strictly positive interval",
                              static_cast<int>(dim));
    }
    // Point interval: exact evaluation (all our activations are continuous).
    if (l == u) return {0.0, eval_activation(f, l), 0.0};

    switch (f) {
        case ActivationKind::ReLU: {
            if (l >= 0.0) return {1.0, 0.0, 0.0};
            if (u <= 0.0) return {0.0, 0.0, 0.0};
            const double lambda = u / (u - l);
            const double mu = -lambda * l / 2.0;
            return {lambda, mu, mu * (1.0 + kErrSlack)};
        }
        case ActivationKind::Tanh:
            return relax_s_shaped(l, u, std::tanh(l), std::tanh(u), dtanh(l), dtanh(u));
        case ActivationKind::Sigmoid:
            return relax_s_shaped(l, u, sigmoid(l), sigmoid(u), dsigmoid(l), dsigmoid(u));
        case ActivationKind::Exp: {
            const double fl = std::exp(l);
            const double fu = std::exp(u);
            if (!std::isfinite(fu))
                throw DomainError("Exp enclosure overflow", static_cast<int>(dim));
            const double lambda = (fu - fl) / (u - l);
            const double x_star = std::log(lambda);
            return relax_convex_chord(l, u, fl, fu, x_star, lambda);
        }
        case ActivationKind::Reciprocal: {
            const double x_star = std::sqrt(l * u);
            return relax_convex_chord(l, u, 1.0 / l, 1.0 / u, x_star, 1.0 / x_star);
        }
        case ActivationKind::Sqrt: {
            const double sl = std::sqrt(l);
            const double su = std::sqrt(u);
            const double x_star = 0.25 * (sl + su) * (sl + su);
            return relax_concave_chord(l, u, sl, su, x_star, std::sqrt(x_star));
        }
    }
    throw InvalidArgument("unknown activation kind");
}

}  // namespace

const char* to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::ReLU: return "relu";
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Sigmoid: return "sigmoid";
        case ActivationKind::Exp: return "exp";
        case ActivationKind::Reciprocal: return "reciprocal";
        case ActivationKind::Sqrt: return "sqrt";
    }
    return "?";
}

VecD Zonotope::point(const VecD& beta) const {
    if (beta.size() != gens.cols)
        throw InvalidArgument("point: coefficient count mismatch");
    VecD x = center;
    for (std::size_t i = 0; i < dim(); ++i) {
        const double* r = gens.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j) acc += r[j] * beta[j];
        x[i] += acc;
    }
    return x;
}

void validate(const Zonotope& z) {
    if (z.gens.rows != z.center.size())
        throw InvalidArgument("zonotope: generator row count != center length");
    if (!all_finite(z.center) || !all_finite(z.gens))
        throw InvalidArgument("zonotope: non-finite entry");
}

Zonotope make_ball(const VecD& center, double eps) {
    if (!(eps >= 0.0)) throw InvalidArgument("make_ball: eps must be >= 0");
    if (!all_finite(center)) throw InvalidArgument("make_ball: non-finite center");
    const std::size_t n = center.size();
    Zonotope z{center, Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) z.gens.at(i, i) = eps;
    return z;
}

Zonotope affine(const Zonotope& z, const Matrix& w, const VecD& b) {
    if (w.cols != z.dim()) throw InvalidArgument("affine: W column count != dim");
    if (b.size() != w.rows) throw InvalidArgument("affine: bias length != W row count");
    Zonotope out;
    out.center = matvec(w, z.center);
    for (std::size_t i = 0; i < out.center.size(); ++i) out.center[i] += b[i];
    out.gens = matmul(w, z.gens);
    return out;
}

IntervalVector interval_hull(const Zonotope& z) {
    const std::size_t n = z.dim();
    IntervalVector iv{VecD(n), VecD(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const double r = row_abs_sum(z.gens, i);
        iv.lo[i] = z.center[i] - r;
        iv.hi[i] = z.center[i] + r;
    }
    return iv;
}

Zonotope enclose_elementwise(const Zonotope& z, ActivationKind f, double delta_pos) {
    const std::size_t n = z.dim();
    const std::size_t q = z.symbols();
    const IntervalVector hull = interval_hull(z);

    std::vector<Relaxation> rel(n);
    std::size_t fresh = 0;
    for (std::size_t i = 0; i < n; ++i) {
        rel[i] = relax_dimension(f, hull.lo[i], hull.hi[i], delta_pos, i);
        if (rel[i].err > 0.0) ++fresh;
    }

    Zonotope out{VecD(n), Matrix(n, q + fresh)};
    std::size_t next_fresh = q;
    for (std::size_t i = 0; i < n; ++i) {
        const Relaxation& rx = rel[i];
        out.center[i] = rx.lambda * z.center[i] + rx.mu;
        const double* src = z.gens.row(i);
        double* dst = out.gens.row(i);
        for (std::size_t j = 0; j < q; ++j) dst[j] = rx.lambda * src[j];
        if (rx.err > 0.0) dst[next_fresh++] = rx.err;
        if (!std::isfinite(out.center[i]))
            throw DomainError("non-finite enclosure result", static_cast<int>(i));
    }
    return out;
}

namespace {

// Accumulates the sound enclosure of Σ_s a_s(β)·b_s(β) for scalar affine
// forms sharing one symbol space. The quadratic part Q_kl = Σ_s a_k b_l is
// handled as: diagonal β² terms re-centered into [½Q_kk ± ½|Q_kk|], mixed
// terms bounded by Σ_{k<l} |Q_kl + Q_lk|.
struct BilinearAccum {
    explicit BilinearAccum(std::size_t q)
        : center(0.0), lin(q, 0.0), q_(q), pos_a_(q, -1), pos_b_(q, -1) {}

    void add_pair(double a0, const double* a, double b0, const double* b) {
        center += a0 * b0;
        for (std::size_t k = 0; k < q_; ++k) {
            const double ak = a[k];
            const double bk = b[k];
            if (ak != 0.0 && pos_a_[k] < 0) {
                pos_a_[k] = static_cast<int>(active_a_.size());
                active_a_.push_back(k);
            }
            if (bk != 0.0 && pos_b_[k] < 0) {
                pos_b_[k] = static_cast<int>(active_b_.size());
                active_b_.push_back(k);
            }
            lin[k] += a0 * bk + b0 * ak;
        }
        pairs_.push_back({a, b});
    }

    // Finishes the quadratic bookkeeping; returns the fresh error magnitude.
    double finish() {
        const std::size_t na = active_a_.size();
        const std::size_t nb = active_b_.size();
        if (na == 0 || nb == 0) return 0.0;

        std::vector<double> qmat(na * nb, 0.0);
        for (const auto& p : pairs_) {
            for (std::size_t ia = 0; ia < na; ++ia) {
                const double av = p.a[active_a_[ia]];
                if (av == 0.0) continue;
                double* qrow = qmat.data() + ia * nb;
                for (std::size_t ib = 0; ib < nb; ++ib)
                    qrow[ib] += av * p.b[active_b_[ib]];
            }
        }

        auto q_at = [&](std::size_t k, std::size_t l) -> double {
            const int ia = pos_a_[k];
            const int ib = pos_b_[l];
            if (ia < 0 || ib < 0) return 0.0;
            return qmat[static_cast<std::size_t>(ia) * nb + static_cast<std::size_t>(ib)];
        };

        // Union of active symbols, ascending.
        std::vector<std::size_t> uni;
        uni.reserve(na + nb);
        std::merge(active_a_.begin(), active_a_.end(), active_b_.begin(),
                   active_b_.end(), std::back_inserter(uni));
        uni.erase(std::unique(uni.begin(), uni.end()), uni.end());

        double err = 0.0;
        for (std::size_t x = 0; x < uni.size(); ++x) {
            const std::size_t k = uni[x];
            const double qkk = q_at(k, k);
            center += 0.5 * qkk;
            err += 0.5 * std::abs(qkk);
            for (std::size_t y = x + 1; y < uni.size(); ++y) {
                const std::size_t l = uni[y];
                err += std::abs(q_at(k, l) + q_at(l, k));
            }
        }
        return err * (1.0 + kErrSlack);
    }

    double center;
    VecD lin;

private:
    struct Pair {
        const double* a;
        const double* b;
    };
    std::size_t q_;
    std::vector<Pair> pairs_;
    std::vector<std::size_t> active_a_, active_b_;
    std::vector<int> pos_a_, pos_b_;
};

Zonotope assemble_bilinear(std::vector<double>&& centers, std::vector<VecD>&& lins,
                           std::vector<double>&& errs, std::size_t q) {
    const std::size_t n = centers.size();
    std::size_t fresh = 0;
    for (double e : errs)
        if (e > 0.0) ++fresh;
    Zonotope out{VecD(std::move(centers)), Matrix(n, q + fresh)};
    std::size_t next_fresh = q;
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.gens.row(i);
        for (std::size_t j = 0; j < q; ++j) dst[j] = lins[i][j];
        if (errs[i] > 0.0) dst[next_fresh++] = errs[i];
    }
    return out;
}

}  // namespace

Zonotope multiply_elementwise(const Zonotope& zx, const Zonotope& zy) {
    if (zx.dim() != zy.dim())
        throw InvalidArgument("multiply_elementwise: dimension mismatch");
    if (zx.symbols() != zy.symbols())
        throw InvalidArgument("multiply_elementwise: symbol-space mismatch");
    const std::size_t n = zx.dim();
    const std::size_t q = zx.symbols();

    std::vector<double> centers(n), errs(n);
    std::vector<VecD> lins(n);
    for (std::size_t i = 0; i < n; ++i) {
        BilinearAccum acc(q);
        acc.add_pair(zx.center[i], zx.gens.row(i), zy.center[i], zy.gens.row(i));
        errs[i] = acc.finish();
        centers[i] = acc.center;
        lins[i] = std::move(acc.lin);
    }
    return assemble_bilinear(std::move(centers), std::move(lins), std::move(errs), q);
}

Zonotope matmul_zz(const Zonotope& za, std::size_t r, std::size_t s,
                   const Zonotope& zb, std::size_t t) {
    if (za.dim() != r * s) throw InvalidArgument("matmul_zz: A layout mismatch");
    if (zb.dim() != s * t) throw InvalidArgument("matmul_zz: B layout mismatch");
    if (za.symbols() != zb.symbols())
        throw InvalidArgument("matmul_zz: symbol-space mismatch");
    const std::size_t q = za.symbols();
    const std::size_t n = r * t;

    std::vector<double> centers(n), errs(n);
    std::vector<VecD> lins(n);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            BilinearAccum acc(q);
            for (std::size_t k = 0; k < s; ++k) {
                const std::size_t ai = i * s + k;
                const std::size_t bi = k * t + j;
                acc.add_pair(za.center[ai], za.gens.row(ai),
                             zb.center[bi], zb.gens.row(bi));
            }
            const std::size_t o = i * t + j;
            errs[o] = acc.finish();
            centers[o] = acc.center;
            lins[o] = std::move(acc.lin);
        }
    }
    return assemble_bilinear(std::move(centers), std::move(lins), std::move(errs), q);
}

Zonotope softmax_enclose(const Zonotope& z, double delta_pos) {
    const std::size_t k = z.dim();
    if (k == 0) throw InvalidArgument("softmax_enclose: empty input");

    // Constant shift by the max center keeps exponents tame and is exact:
    // softmax(x − c·1) = softmax(x).
    const double shift = *std::max_element(z.center.begin(), z.center.end());
    Zonotope shifted = z;
    for (double& c : shifted.center) c -= shift;

    const IntervalVector shull = interval_hull(shifted);
    for (std::size_t i = 0; i < k; ++i)
        if (shull.hi[i] > kExpArgCap)
            throw DomainError("radius too large for softmax enclosure",
                              static_cast<int>(i));

    Zonotope ez = enclose_elementwise(shifted, ActivationKind::Exp);

    Matrix ones_row(1, k);
    for (std::size_t j = 0; j < k; ++j) ones_row.at(0, j) = 1.0;
    Zonotope sum = affine(ez, ones_row, VecD(1, 0.0));

    if (!(interval_hull(sum).lo[0] > delta_pos))
        throw DomainError("radius too large for softmax enclosure");
    Zonotope recip = enclose_elementwise(sum, ActivationKind::Reciprocal, delta_pos);

    Matrix ones_col(k, 1);
    for (std::size_t i = 0; i < k; ++i) ones_col.at(i, 0) = 1.0;
    Zonotope recip_b = affine(recip, ones_col, VecD(k, 0.0));

    Zonotope prod = multiply_elementwise(pad_symbols(ez, recip_b.symbols()), recip_b);

    // True softmax values lie in [0, 1]; intersecting per entry is sound.
    return tighten_dims_to_box(prod, VecD(k, 0.0), VecD(k, 1.0));
}

Zonotope reduce_order(const Zonotope& z, std::size_t q_max) {
    const std::size_t n = z.dim();
    const std::size_t q = z.symbols();
    if (q_max < n) throw InvalidArgument("reduce_order: q_max must be >= dim");
    if (q <= q_max) return z;

    std::vector<double> l1(q, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = z.gens.row(i);
        for (std::size_t j = 0; j < q; ++j) l1[j] += std::abs(r[j]);
    }
    std::vector<std::size_t> order(q);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return l1[a] > l1[b]; });

    const std::size_t keep = q_max - n;
    std::vector<std::size_t> kept(order.begin(), order.begin() + keep);
    std::sort(kept.begin(), kept.end());
    std::vector<bool> is_kept(q, false);
    for (std::size_t j : kept) is_kept[j] = true;

    Zonotope out{z.center, Matrix(n, keep + n)};
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = z.gens.row(i);
        double* dst = out.gens.row(i);
        for (std::size_t x = 0; x < keep; ++x) dst[x] = src[kept[x]];
        double box = 0.0;
        for (std::size_t j = 0; j < q; ++j)
            if (!is_kept[j]) box += std::abs(src[j]);
        dst[keep + i] = box;
    }
    return out;
}

Zonotope pad_symbols(const Zonotope& z, std::size_t q_new) {
    const std::size_t q = z.symbols();
    if (q_new < q) throw InvalidArgument("pad_symbols: cannot drop symbols");
    if (q_new == q) return z;
    Zonotope out{z.center, Matrix(z.dim(), q_new)};
    for (std::size_t i = 0; i < z.dim(); ++i) {
        const double* src = z.gens.row(i);
        double* dst = out.gens.row(i);
        std::copy(src, src + q, dst);
    }
    return out;
}

Zonotope add_dependent(const Zonotope& zx, const Zonotope& zy) {
    if (zx.dim() != zy.dim() || zx.symbols() != zy.symbols())
        throw InvalidArgument("add_dependent: shape/symbol mismatch");
    Zonotope out = zx;
    for (std::size_t i = 0; i < out.center.size(); ++i) out.center[i] += zy.center[i];
    for (std::size_t i = 0; i < out.gens.data.size(); ++i)
        out.gens.data[i] += zy.gens.data[i];
    return out;
}

Zonotope select_rows(const Zonotope& z, const std::vector<std::size_t>& rows) {
    Zonotope out{VecD(rows.size()), Matrix(rows.size(), z.symbols())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= z.dim()) throw InvalidArgument("select_rows: index out of range");
        out.center[i] = z.center[rows[i]];
        const double* src = z.gens.row(rows[i]);
        std::copy(src, src + z.symbols(), out.gens.row(i));
    }
    return out;
}

Zonotope stack_rows(const std::vector<Zonotope>& parts, std::size_t q_shared) {
    std::size_t n = 0;
    std::size_t fresh_total = 0;
    for (const Zonotope& p : parts) {
        if (p.symbols() < q_shared)
            throw InvalidArgument("stack_rows: part has fewer symbols than shared block");
        n += p.dim();
        fresh_total += p.symbols() - q_shared;
    }
    Zonotope out{VecD(n), Matrix(n, q_shared + fresh_total)};
    std::size_t row0 = 0;
    std::size_t fresh0 = q_shared;
    for (const Zonotope& p : parts) {
        const std::size_t fresh = p.symbols() - q_shared;
        for (std::size_t i = 0; i < p.dim(); ++i) {
            out.center[row0 + i] = p.center[i];
            const double* src = p.gens.row(i);
            double* dst = out.gens.row(row0 + i);
            std::copy(src, src + q_shared, dst);
            std::copy(src + q_shared, src + p.symbols(), dst + fresh0);
        }
        row0 += p.dim();
        fresh0 += fresh;
    }
    return out;
}

Zonotope tighten_dims_to_box(const Zonotope& z, const VecD& lo, const VecD& hi) {
    if (lo.size() != z.dim() || hi.size() != z.dim())
        throw InvalidArgument("tighten_dims_to_box: bound length mismatch");
    const IntervalVector hull = interval_hull(z);
    std::vector<std::size_t> loose;
    for (std::size_t i = 0; i < z.dim(); ++i)
        if (hull.lo[i] < lo[i] || hull.hi[i] > hi[i]) loose.push_back(i);
    if (loose.empty()) return z;

    Zonotope out = z;
    const std::size_t q = z.symbols();
    out.gens = Matrix(z.dim(), q + loose.size());
    for (std::size_t i = 0; i < z.dim(); ++i) {
        const double* src = z.gens.row(i);
        std::copy(src, src + q, out.gens.row(i));
    }
    std::size_t next = q;
    for (std::size_t i : loose) {
        double nl = std::max(hull.lo[i], lo[i]);
        double nh = std::min(hull.hi[i], hi[i]);
        if (nl > nh) nl = nh = 0.5 * (nl + nh);  // degenerate overlap guard
        out.center[i] = 0.5 * (nl + nh);
        double* dst = out.gens.row(i);
        std::fill(dst, dst + q, 0.0);
        dst[next++] = 0.5 * (nh - nl);
    }
    return out;
}

}  // namespace faircert::zono
