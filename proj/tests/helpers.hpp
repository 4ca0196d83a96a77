#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "faircert/zonotope.hpp"

namespace testutil {

using faircert::Matrix;
using faircert::VecD;
using faircert::zono::IntervalVector;
using faircert::zono::Zonotope;

using Rng = std::mt19937_64;

inline VecD random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    VecD v(n);
    for (double& x : v) x = d(rng);
    return v;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(r, c);
    for (double& x : m.data) x = d(rng);
    return m;
}

inline Zonotope random_zonotope(std::size_t n, std::size_t q, Rng& rng,
                                double center_lo = -1.0, double center_hi = 1.0,
                                double gen_scale = 0.3) {
    Zonotope z;
    z.center = random_vec(n, rng, center_lo, center_hi);
    z.gens = random_matrix(n, q, rng, -gen_scale, gen_scale);
    return z;
}

inline VecD sample_beta(std::size_t q, Rng& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    VecD b(q);
    for (double& x : b) x = d(rng);
    return b;
}

inline bool inside_hull(const IntervalVector& hull, const VecD& x, double tol = 1e-9) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double slack = tol * (1.0 + std::abs(hull.lo[i]) + std::abs(hull.hi[i]));
        if (x[i] < hull.lo[i] - slack || x[i] > hull.hi[i] + slack) return false;
    }
    return true;
}

inline bool hull_contained(const IntervalVector& inner, const IntervalVector& outer,
                           double tol = 1e-9) {
    for (std::size_t i = 0; i < inner.lo.size(); ++i) {
        const double slack = tol * (1.0 + std::abs(outer.lo[i]) + std::abs(outer.hi[i]));
        if (inner.lo[i] < outer.lo[i] - slack) return false;
        if (inner.hi[i] > outer.hi[i] + slack) return false;
    }
    return true;
}

/// Exact hull of { W(c + Gβ) + b : β ∈ {±1}^q } by exhausting sign patterns.
inline IntervalVector brute_force_affine_hull(const Zonotope& z, const Matrix& w,
                                              const VecD& b) {
    const std::size_t q = z.symbols();
    const std::size_t m = w.rows;
    IntervalVector out{VecD(m, 1e300), VecD(m, -1e300)};
    VecD beta(q);
    for (std::uint64_t mask = 0; mask < (1ull << q); ++mask) {
        for (std::size_t j = 0; j < q; ++j) beta[j] = (mask >> j) & 1 ? 1.0 : -1.0;
        VecD x = z.point(beta);
        VecD y = faircert::matvec(w, x);
        for (std::size_t i = 0; i < m; ++i) {
            y[i] += b[i];
            out.lo[i] = std::min(out.lo[i], y[i]);
            out.hi[i] = std::max(out.hi[i], y[i]);
        }
    }
    return out;
}

/// Runs `samples` random-β soundness checks of an abstract op against its
/// concrete twin; returns the number of violations.
inline int soundness_violations(
    const Zonotope& input, const Zonotope& output,
    const std::function<VecD(const VecD&)>& concrete, int samples, Rng& rng,
    double tol = 1e-9) {
    const IntervalVector hull = faircert::zono::interval_hull(output);
    int bad = 0;
    for (int s = 0; s < samples; ++s) {
        const VecD beta = sample_beta(input.symbols(), rng);
        const VecD x = input.point(beta);
        const VecD y = concrete(x);
        if (!inside_hull(hull, y, tol)) ++bad;
    }
    return bad;
}

}  // namespace testutil
