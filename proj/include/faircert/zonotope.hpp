#pragma once

#include <cstddef>
#include <vector>

#include "faircert/linalg.hpp"

namespace faircert::zono {

/// Default positivity guard for Reciprocal/Sqrt enclosures.
inline constexpr double kDefaultDeltaPos = 1e-12;

/// Largest exponent magnitude softmax_enclose accepts before reporting the
/// radius as too large to enclose (keeps exp() finite with headroom).
inline constexpr double kExpArgCap = 300.0;

/// A zonotope ⟨c, G⟩ = { c + Σ_j β_j g_j : β_j ∈ [−1, 1] } where g_j is the
/// j-th column of `gens`. Immutable by convention: operations return new
/// values, so zonotopes can be shared freely across threads.
struct Zonotope {
    VecD center;   // length n
    Matrix gens;   // n × q

    std::size_t dim() const { return center.size(); }
    std::size_t symbols() const { return gens.cols; }

    /// Materialize the point c + G β for a concrete coefficient vector.
    VecD point(const VecD& beta) const;
};

/// Axis-aligned box, elementwise lo ≤ hi.
struct IntervalVector {
    VecD lo;
    VecD hi;
};

/// Elementwise nonlinearities with sound zonotopic enclosures.
enum class ActivationKind { ReLU, Tanh, Sigmoid, Exp, Reciprocal, Sqrt };

const char* to_string(ActivationKind k);

/// Throws InvalidArgument unless center/generators are finite and consistent.
void validate(const Zonotope& z);

/// ℓ∞ ball of radius eps: ⟨center, eps·I⟩ (always n axis-aligned generators).
Zonotope make_ball(const VecD& center, double eps);

/// Exact affine image ⟨W c + b, W G⟩.
Zonotope affine(const Zonotope& z, const Matrix& w, const VecD& b);

/// Tightest axis-aligned box: c_i ± Σ_j |G_ij|.
IntervalVector interval_hull(const Zonotope& z);

/// Sound elementwise enclosure of f. Each dimension is relaxed to
/// λ·x + μ with one fresh generator of magnitude t over its hull interval;
/// exact (t = 0, no fresh symbol) when f is linear on the interval or the
/// interval is a point. Reciprocal/Sqrt require hull lower bound > delta_pos.
Zonotope enclose_elementwise(const Zonotope& z, ActivationKind f,
                             double delta_pos = kDefaultDeltaPos);

/// Sound enclosure of the elementwise product x ∘ y for zonotopes sharing one
/// noise-symbol space (same q, positional identity). Exact when either factor
/// is a point.
Zonotope multiply_elementwise(const Zonotope& zx, const Zonotope& zy);

/// Sound enclosure of the matrix product A·B where `za` ranges over r×s
/// matrices (row-major layout) and `zb` over s×t matrices, sharing one
/// symbol space. The 1×1×1 case coincides with multiply_elementwise.
Zonotope matmul_zz(const Zonotope& za, std::size_t r, std::size_t s,
                   const Zonotope& zb, std::size_t t);

/// Sound enclosure of softmax over the whole (length-k) zonotope: max-of-center
/// shift, Exp enclosure, exact sum, Reciprocal enclosure, product, then a sound
/// per-entry intersection with [0, 1]. Throws DomainError
/// ("radius too large for softmax enclosure") when the denominator cannot be
/// bounded away from zero or an exponent overflows.
Zonotope softmax_enclose(const Zonotope& z, double delta_pos = kDefaultDeltaPos);

/// Girard-style order reduction: identity when q ≤ q_max, otherwise keeps the
/// q_max − n generators of largest ℓ1 norm and over-approximates the rest by
/// an axis-aligned box. Requires q_max ≥ n. Result contains the input.
Zonotope reduce_order(const Zonotope& z, std::size_t q_max);

// ---- exact symbol-space plumbing -----------------------------------------

/// Append zero generator columns until q_new symbols (no-op if already there).
Zonotope pad_symbols(const Zonotope& z, std::size_t q_new);

/// Exact sum x + y of two zonotopes over the same symbol space: centers and
/// generator matrices add (this is the dependent sum, not the Minkowski sum).
Zonotope add_dependent(const Zonotope& zx, const Zonotope& zy);

/// Exact projection onto a subset/permutation of dimensions; symbols unchanged.
Zonotope select_rows(const Zonotope& z, const std::vector<std::size_t>& rows);

/// Stack parts vertically. All parts share their first q_shared symbols;
/// symbols beyond q_shared are private to each part and are re-indexed into
/// disjoint trailing blocks of the result.
Zonotope stack_rows(const std::vector<Zonotope>& parts, std::size_t q_shared);

/// Sound per-dimension intersection with box [lo, hi], valid when every true
/// value is known to lie in the box: dimensions whose hull sticks out are
/// replaced by an independent interval (dependency for those dims is dropped).
Zonotope tighten_dims_to_box(const Zonotope& z, const VecD& lo, const VecD& hi);

}  // namespace faircert::zono
