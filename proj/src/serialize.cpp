#include "faircert/serialize.hpp"

#include <fstream>

#include "faircert/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace faircert::io {

namespace {

constexpr const char* kEmbeddingSchema = "faircert-embedding/1";
constexpr const char* kModelSchema = "faircert-model/1";

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows, const char* name) {
    if (!rows.is_array() || rows.empty())
        throw SchemaError(std::string("expected a nonempty array for ") + name);
    const std::size_t r = rows.size();
    const std::size_t c = rows[0].size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (!rows[i].is_array() || rows[i].size() != c)
            throw SchemaError(std::string("ragged rows in ") + name);
        for (std::size_t j = 0; j < c; ++j) m.at(i, j) = rows[i][j].get<double>();
    }
    return m;
}

json vec_to_json(const VecD& v) { return json(v); }

VecD vec_from_json(const json& a, const char* name) {
    if (!a.is_array()) throw SchemaError(std::string("expected an array for ") + name);
    return a.get<VecD>();
}

json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), path);
    }
}

void write_file(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    out << doc.dump(1) << '\n';
}

const json& field(const json& doc, const char* name) {
    auto it = doc.find(name);
    if (it == doc.end())
        throw SchemaError(std::string("missing field: ") + name);
    return *it;
}

json embedding_to_json(const embed::EmbeddingTable& table) {
    table.check_invariants();
    json doc;
    doc["schema"] = kEmbeddingSchema;
    doc["dim"] = table.dim;
    doc["vocab"] = table.vocab.tokens();
    doc["weights"] = matrix_to_json(table.weights);
    return doc;
}

embed::EmbeddingTable embedding_from_json(const json& doc) {
    if (field(doc, "schema").get<std::string>() != kEmbeddingSchema)
        throw SchemaError("not an embedding table document");
    const auto tokens = field(doc, "vocab").get<std::vector<std::string>>();
    if (tokens.size() < 2 || tokens[0] != lm::kPadToken || tokens[1] != lm::kUnkToken)
        throw SchemaError("vocabulary must start with [PAD], [UNK]");
    embed::EmbeddingTable table;
    table.vocab = lm::Vocab(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
    table.dim = field(doc, "dim").get<std::size_t>();
    table.weights = matrix_from_json(field(doc, "weights"), "weights");
    table.check_invariants();
    return table;
}

}  // namespace

void save_embedding(const embed::EmbeddingTable& table, const std::string& path) {
    write_file(embedding_to_json(table), path);
}

embed::EmbeddingTable load_embedding(const std::string& path) {
    try {
        return embedding_from_json(parse_file(path));
    } catch (const json::exception& e) {
        throw SchemaError("embedding table " + path + ": " + e.what());
    }
}

void save_model(const lm::TransformerModel& model, const std::string& path) {
    model.check_invariants();
    json doc;
    doc["schema"] = kModelSchema;
    doc["hyper"] = {
        {"heads", model.hyper.heads}, {"dim", model.hyper.dim},
        {"ff_dim", model.hyper.ff_dim}, {"max_seq", model.hyper.max_seq},
        {"dropout", model.hyper.dropout},
    };
    doc["embedding"] = embedding_to_json(model.embedding);
    doc["embedding_frozen"] = model.embedding_frozen;
    json blocks = json::array();
    for (const lm::EncoderBlock& b : model.blocks) {
        json jb;
        jb["wq"] = matrix_to_json(b.wq);
        jb["bq"] = vec_to_json(b.bq);
        jb["wk"] = matrix_to_json(b.wk);
        jb["bk"] = vec_to_json(b.bk);
        jb["wv"] = matrix_to_json(b.wv);
        jb["bv"] = vec_to_json(b.bv);
        jb["wo"] = matrix_to_json(b.wo);
        jb["bo"] = vec_to_json(b.bo);
        jb["ln1_gamma"] = vec_to_json(b.ln1_gamma);
        jb["ln1_beta"] = vec_to_json(b.ln1_beta);
        jb["ff_w1"] = matrix_to_json(b.ff_w1);
        jb["ff_b1"] = vec_to_json(b.ff_b1);
        jb["ff_w2"] = matrix_to_json(b.ff_w2);
        jb["ff_b2"] = vec_to_json(b.ff_b2);
        jb["ln2_gamma"] = vec_to_json(b.ln2_gamma);
        jb["ln2_beta"] = vec_to_json(b.ln2_beta);
        blocks.push_back(std::move(jb));
    }
    doc["blocks"] = std::move(blocks);
    doc["head"] = {{"w", matrix_to_json(model.head_w)}, {"b", vec_to_json(model.head_b)}};
    write_file(doc, path);
}

lm::TransformerModel load_model(const std::string& path) {
    const json doc = parse_file(path);
    try {
        if (field(doc, "schema").get<std::string>() != kModelSchema)
            throw SchemaError("not a model document");
        lm::TransformerModel m;
        const json& h = field(doc, "hyper");
        m.hyper.heads = field(h, "heads").get<std::size_t>();
        m.hyper.dim = field(h, "dim").get<std::size_t>();
        m.hyper.ff_dim = field(h, "ff_dim").get<std::size_t>();
        m.hyper.max_seq = field(h, "max_seq").get<std::size_t>();
        m.hyper.dropout = field(h, "dropout").get<double>();
        m.embedding = embedding_from_json(field(doc, "embedding"));
        m.embedding_frozen = field(doc, "embedding_frozen").get<bool>();
        m.positional = lm::sinusoidal_positional(m.hyper.max_seq, m.hyper.dim);
        for (const json& jb : field(doc, "blocks")) {
            lm::EncoderBlock b;
            b.wq = matrix_from_json(field(jb, "wq"), "wq");
            b.bq = vec_from_json(field(jb, "bq"), "bq");
            b.wk = matrix_from_json(field(jb, "wk"), "wk");
            b.bk = vec_from_json(field(jb, "bk"), "bk");
            b.wv = matrix_from_json(field(jb, "wv"), "wv");
            b.bv = vec_from_json(field(jb, "bv"), "bv");
            b.wo = matrix_from_json(field(jb, "wo"), "wo");
            b.bo = vec_from_json(field(jb, "bo"), "bo");
            b.ln1_gamma = vec_from_json(field(jb, "ln1_gamma"), "ln1_gamma");
            b.ln1_beta = vec_from_json(field(jb, "ln1_beta"), "ln1_beta");
            b.ff_w1 = matrix_from_json(field(jb, "ff_w1"), "ff_w1");
            b.ff_b1 = vec_from_json(field(jb, "ff_b1"), "ff_b1");
            b.ff_w2 = matrix_from_json(field(jb, "ff_w2"), "ff_w2");
            b.ff_b2 = vec_from_json(field(jb, "ff_b2"), "ff_b2");
            b.ln2_gamma = vec_from_json(field(jb, "ln2_gamma"), "ln2_gamma");
            b.ln2_beta = vec_from_json(field(jb, "ln2_beta"), "ln2_beta");
            m.blocks.push_back(std::move(b));
        }
        const json& head = field(doc, "head");
        m.head_w = matrix_from_json(field(head, "w"), "head.w");
        m.head_b = vec_from_json(field(head, "b"), "head.b");
        m.check_invariants();
        return m;
    } catch (const json::exception& e) {
        throw SchemaError("model " + path + ": " + e.what());
    }
}

std::vector<embed::WordPair> load_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    std::vector<embed::WordPair> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                                       : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw ParseError("expected left<TAB>right<TAB>label", path, line_no);
        embed::WordPair p;
        p.left = line.substr(0, t1);
        p.right = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string label = line.substr(t2 + 1);
        if (label == "0")
            p.label = 0;
        else if (label == "1")
            p.label = 1;
        else
            throw ParseError("label must be 0 or 1", path, line_no);
        if (p.left.empty() || p.right.empty())
            throw ParseError("empty pair side", path, line_no);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::string> load_wordlist(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

void write_loss_history(const std::string& path,
                        const std::vector<std::pair<std::string, VecD>>& phases) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    out << "phase,epoch,loss\n";
    out.precision(17);
    for (const auto& [name, losses] : phases)
        for (std::size_t i = 0; i < losses.size(); ++i)
            out << name << ',' << i << ',' << losses[i] << '\n';
}

void write_train_history(const std::string& path,
                         const std::vector<lm::EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing", path);
    out << "epoch,train_loss,val_loss,val_accuracy,lr\n";
    out.precision(17);
    for (std::size_t i = 0; i < history.size(); ++i)
        out << i << ',' << history[i].train_loss << ',' << history[i].val_loss << ','
            << history[i].val_accuracy << ',' << history[i].learning_rate << '\n';
}

}  // namespace faircert::io
