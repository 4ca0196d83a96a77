#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "faircert/transformer.hpp"
#include "faircert/zonotope.hpp"

namespace faircert::verify {

/// ℓ∞ perturbation of token embeddings: every listed original-sequence
/// position gets an independent noise symbol per embedding dimension.
/// Without an explicit position set, all non-PAD positions are perturbed.
struct PerturbationSpec {
    double eps = 0.0;
    std::optional<std::vector<std::size_t>> positions;
    std::size_t order_cap_multiplier = 50;  // q_max = multiplier · n after each block
    double delta_pos = zono::kDefaultDeltaPos;
};

enum class FailureReason { None, MarginStraddlesZero, SoftmaxDomainError };

const char* to_string(FailureReason r);

struct Certificate {
    bool verified = false;
    int predicted_label = 0;
    double margin_lo = 0.0;  // lower bound of logit_pred − logit_other
    double margin_hi = 0.0;
    double eps = 0.0;
    FailureReason failure = FailureReason::None;
};

/// Abstract output-logit zonotope for an id sequence under `spec`.
/// Exposed for the concrete/abstract consistency checks.
zono::Zonotope propagate_logits(const lm::TransformerModel& model,
                                const std::vector<int>& ids,
                                const PerturbationSpec& spec);

/// Sound robustness check at one radius. Domain errors inside the enclosure
/// pipeline surface as an unverified certificate, never as unsoundness.
Certificate verify_at_radius(const lm::TransformerModel& model,
                             const std::vector<int>& ids,
                             const PerturbationSpec& spec);

struct SearchParams {
    double eps_hi_init = 1e-2;
    double growth = 2.0;
    double eps_cap = 10.0;
    double abs_tol = 1e-7;
};

struct RadiusResult {
    double eps_max = 0.0;
    bool capped = false;        // still verified at eps_cap
    bool none_found = false;    // unverified even at eps_hi_init / 2^20
    Certificate certificate;    // certificate at eps_max (when one exists)
};

/// Exponential growth then bisection; returns the largest tested verified
/// radius (within abs_tol of the verification boundary).
RadiusResult max_verifiable_radius(const lm::TransformerModel& model,
                                   const std::vector<int>& ids,
                                   const PerturbationSpec& base,
                                   const SearchParams& search = {});

struct ThresholdReport {
    std::vector<std::pair<std::string, double>> per_anchor;  // max k-NN distance
    double d = 0.0;                                          // max over anchors
};

/// D = max over anchors of the largest ℓ∞ distance to their k nearest
/// embedding neighbors.
ThresholdReport compute_threshold(const embed::EmbeddingTable& table,
                                  const std::vector<std::string>& anchors,
                                  std::size_t k);

struct SentenceCertification {
    RadiusResult radius;
    double d_required = 0.0;
    bool certified = false;  // d_required <= radius.eps_max
};

SentenceCertification certify_sentence(const lm::TransformerModel& model,
                                       const std::vector<int>& ids, double d,
                                       const PerturbationSpec& base = {},
                                       const SearchParams& search = {});

/// Ψ = certified count / N. Empty input is an error.
double fairness_score(const std::vector<bool>& certified);

struct FairnessReport {
    double threshold_d = 0.0;
    struct Sentence {
        std::size_t index = 0;
        std::vector<std::string> tokens;
        double eps_max = 0.0;
        bool capped = false;
        double margin_at_zero = 0.0;
        bool certified = false;
        std::string failure;  // empty when the radius search succeeded
    };
    std::vector<Sentence> sentences;
    std::size_t certified_count = 0;
    double psi = 0.0;
};

/// Pure decision arithmetic: certified_l ⇔ D ≤ radii_l. This is the exact
/// computation behind the radar plots and the dataset score.
FairnessReport fairness_from_radii(const VecD& radii, double d);

/// Exhaustively replaces ids at each position with every candidate
/// combination; true iff the prediction never changes. `substitutions` is
/// aligned with `ids`; the original id is always among the options.
bool brute_force_certify(const lm::TransformerModel& model,
                         const std::vector<int>& ids,
                         const std::vector<std::vector<int>>& substitutions,
                         std::uint64_t cap = 1000000);

/// Per-sentence radius search over a dataset with optional thread fan-out;
/// results are assembled in input order and independent of thread count.
FairnessReport verify_dataset(const lm::TransformerModel& model,
                              const std::vector<std::vector<int>>& sequences,
                              const std::vector<std::vector<std::string>>& tokens,
                              double threshold_d, const PerturbationSpec& base = {},
                              const SearchParams& search = {}, unsigned threads = 1);

void write_report_json(const FairnessReport& report, const std::string& path);
void write_radar_csv(const FairnessReport& report, const std::string& path);

}  // namespace faircert::verify
