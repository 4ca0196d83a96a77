#include "faircert/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "faircert/errors.hpp"

namespace faircert::data {

const std::vector<std::string>& template_fields() {
    static const std::vector<std::string> fields = {
        "workclass",    "education", "education-num", "occupation",
        "sex",          "marital-status", "relationship", "race",
        "native-country", "hours-per-week"};
    return fields;
}

std::string row_to_sentence(const TabularRow& row) {
    auto get = [&](const char* field) -> const std::string& {
        auto it = row.find(field);
        if (it == row.end())
            throw SchemaError(std::string("row_to_sentence: missing field ") + field);
        return it->second;
    };
    std::string s;
    s += "A person's workclass is " + get("workclass");
    s += ", education is " + get("education");
    s += " (number of years of education is " + get("education-num") + ")";
    s += ", occupation is " + get("occupation");
    s += ", sex is " + get("sex");
    s += ", marital status is " + get("marital-status");
    s += ", relationship is " + get("relationship");
    s += ", race is " + get("race");
    s += ", native country is " + get("native-country");
    s += ", and they work " + get("hours-per-week") + " hours per week.";
    return s;
}

void SynonymMap::check() const {
    for (const auto& [token, alts] : entries) {
        if (alts.empty())
            throw SchemaError("synonym map: empty replacement list for " + token);
        for (const std::string& a : alts)
            if (a == token)
                throw SchemaError("synonym map: token maps to itself: " + token);
    }
}

std::string augment_synonyms(const std::string& sentence, const SynonymMap& map,
                             double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0)
        throw InvalidArgument("augment_synonyms: probability must be in [0,1]");
    map.check();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    // Walk tokens in place so whitespace (and with it p = 0 identity) is
    // preserved exactly.
    std::string out;
    out.reserve(sentence.size());
    std::size_t i = 0;
    while (i < sentence.size()) {
        if (std::isspace(static_cast<unsigned char>(sentence[i]))) {
            out.push_back(sentence[i]);
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < sentence.size() &&
               !std::isspace(static_cast<unsigned char>(sentence[j])))
            ++j;
        std::string token = sentence.substr(i, j - i);
        auto it = map.entries.find(token);
        if (it != map.entries.end() && p > 0.0 && coin(rng) < p) {
            const auto& alts = it->second;
            std::uniform_int_distribution<std::size_t> pick(0, alts.size() - 1);
            token = alts[pick(rng)];
        }
        out += token;
        i = j;
    }
    return out;
}

SplitResult balanced_split(const std::vector<LabeledText>& records,
                           double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed) {
    if (train_ratio < 0.0 || val_ratio < 0.0 || test_ratio < 0.0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw InvalidArgument("balanced_split: ratios must be nonnegative and sum to 1");

    std::vector<std::size_t> class_idx[2];
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int label = records[i].label;
        if (label != 0 && label != 1)
            throw InvalidArgument("balanced_split: labels must be 0/1");
        class_idx[label].push_back(i);
    }
    if (class_idx[0].empty() || class_idx[1].empty())
        throw InvalidArgument("balanced_split: both classes must be present");

    std::mt19937_64 rng(seed);
    SplitResult out;
    for (auto& idx : class_idx) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        const std::size_t b1 = static_cast<std::size_t>(std::floor(n * train_ratio));
        const std::size_t b2 =
            static_cast<std::size_t>(std::floor(n * (train_ratio + val_ratio)));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const LabeledText& r = records[idx[i]];
            if (i < b1)
                out.train.push_back(r);
            else if (i < b2)
                out.val.push_back(r);
            else
                out.test.push_back(r);
        }
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line,
                                        const std::string& path, long line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quote", path, line_no);
    fields.push_back(std::move(cur));
    return fields;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::vector<TabularRow> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw ParseError("empty file", path, 1);
    ++line_no;
    const std::vector<std::string> header = split_csv_line(strip_cr(line), path, line_no);

    std::vector<TabularRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line, path, line_no);
        if (fields.size() != header.size())
            throw ParseError("field count does not match header", path, line_no);
        TabularRow row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

SynonymMap load_synonyms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    SynonymMap map;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("expected token<TAB>alternatives", path, line_no);
        const std::string token = line.substr(0, tab);
        std::vector<std::string> alts;
        std::stringstream ss(line.substr(tab + 1));
        std::string alt;
        while (std::getline(ss, alt, ','))
            if (!alt.empty()) alts.push_back(alt);
        map.entries[token] = std::move(alts);
    }
    map.check();
    return map;
}

std::vector<LabeledText> load_labeled(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    std::vector<LabeledText> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("expected label<TAB>text", path, line_no);
        LabeledText r;
        try {
            r.label = std::stoi(line.substr(0, tab));
        } catch (const std::exception&) {
            throw ParseError("label is not an integer", path, line_no);
        }
        r.text = line.substr(tab + 1);
        out.push_back(std::move(r));
    }
    return out;
}

void save_labeled(const std::vector<LabeledText>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    for (const LabeledText& r : records) out << r.label << '\t' << r.text << '\n';
}

}  // namespace faircert::data
