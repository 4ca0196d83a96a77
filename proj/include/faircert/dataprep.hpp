#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace faircert::data {

/// One census-style record; only the templated attributes are kept.
using TabularRow = std::map<std::string, std::string>;

/// The attribute names the sentence template consumes, in template order.
const std::vector<std::string>& template_fields();

/// Fills the fixed salary-prediction sentence template. Throws SchemaError
/// naming the first missing field.
std::string row_to_sentence(const TabularRow& row);

/// token → nonempty replacement candidates; no token maps to itself.
struct SynonymMap {
    std::map<std::string, std::vector<std::string>> entries;

    void check() const;  // throws SchemaError
};

/// Whitespace tokens present in the map are independently replaced with
/// probability p (uniform choice among candidates). Deterministic per seed.
std::string augment_synonyms(const std::string& sentence, const SynonymMap& map,
                             double p, std::uint64_t seed);

struct LabeledText {
    int label = 0;
    std::string text;
};

struct SplitResult {
    std::vector<LabeledText> train;
    std::vector<LabeledText> val;
    std::vector<LabeledText> test;
};

/// Per-class stratified shuffle split; class proportions per partition are
/// within one record of exact. Ratios must sum to 1 and both classes must be
/// present.
SplitResult balanced_split(const std::vector<LabeledText>& records,
                           double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed);

/// Minimal CSV reader (header row, optional double quotes). Returns one
/// TabularRow per record, keyed by header names.
std::vector<TabularRow> read_csv(const std::string& path);

SynonymMap load_synonyms(const std::string& path);  // token<TAB>alt1,alt2,...

std::vector<LabeledText> load_labeled(const std::string& path);  // label<TAB>text
void save_labeled(const std::vector<LabeledText>& records, const std::string& path);

}  // namespace faircert::data
