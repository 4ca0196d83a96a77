// faircert — pretrain / train / analyze / verify pipeline driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "faircert/dataprep.hpp"
#include "faircert/embedding.hpp"
#include "faircert/errors.hpp"
#include "faircert/serialize.hpp"
#include "faircert/tokenizer.hpp"
#include "faircert/training.hpp"
#include "faircert/transformer.hpp"
#include "faircert/verify.hpp"

using namespace faircert;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--seed", opts.seed, "RNG seed");
    cmd->add_option("--threads", opts.threads, "verification fan-out threads");
    cmd->set_config("--config", "", "read option defaults from an INI/TOML file");
}

lm::Vocab vocab_from_file(const std::string& path) {
    return lm::Vocab(io::load_wordlist(path));
}

std::vector<lm::EncodedExample> encode_dataset(const std::vector<data::LabeledText>& in,
                                               const lm::Vocab& vocab,
                                               std::size_t max_seq) {
    std::vector<lm::EncodedExample> out;
    out.reserve(in.size());
    for (const data::LabeledText& r : in)
        out.push_back({r.label, lm::tokenize(r.text, vocab, max_seq)});
    return out;
}

// ---- pretrain --------------------------------------------------------------

struct PretrainOpts {
    CommonOpts common;
    std::string vocab_file, out_file, history_file;
    std::size_t dim = 8;
    std::string pairs1;
    double alpha1 = 1000.0, margin1 = 1.0;
    int epochs1 = 150;
    std::string pairs2;
    double alpha2 = 1.0, margin2 = 0.5;
    int epochs2 = 30;
    double lr = 1e-3;
    std::size_t batch = 128;
};

int run_pretrain(const PretrainOpts& o) {
    embed::EmbeddingTable table = embed::EmbeddingTable::random_init(
        vocab_from_file(o.vocab_file), o.dim, o.common.seed);

    std::vector<std::pair<std::string, VecD>> history;

    embed::ContrastiveConfig cfg1;
    cfg1.alpha = o.alpha1;
    cfg1.margin = o.margin1;
    cfg1.epochs = o.epochs1;
    cfg1.learning_rate = o.lr;
    cfg1.batch_size = o.batch;
    cfg1.seed = o.common.seed;
    auto r1 = embed::train_embedding(io::load_pairs(o.pairs1), cfg1, std::move(table));
    history.emplace_back("clustering", std::move(r1.epoch_loss));
    table = std::move(r1.table);

    if (!o.pairs2.empty()) {
        embed::ContrastiveConfig cfg2;
        cfg2.alpha = o.alpha2;
        cfg2.margin = o.margin2;
        cfg2.epochs = o.epochs2;
        cfg2.learning_rate = o.lr;
        cfg2.batch_size = o.batch;
        cfg2.seed = o.common.seed + 1;
        auto r2 = embed::train_embedding(io::load_pairs(o.pairs2), cfg2,
                                         std::move(table));
        history.emplace_back("general", std::move(r2.epoch_loss));
        table = std::move(r2.table);
    }

    io::save_embedding(table, o.out_file);
    if (!o.history_file.empty()) io::write_loss_history(o.history_file, history);
    std::cout << "wrote " << o.out_file << "\n";
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string table_file, train_file, val_file, out_file, history_file;
    std::size_t blocks = 1, heads = 2, ff_dim = 8, max_seq = 16, batch = 32;
    double dropout = 0.1, lr = 1e-3, weight_decay = 1e-5;
    int epochs = 100;
};

int run_train(const TrainOpts& o) {
    embed::EmbeddingTable table = io::load_embedding(o.table_file);
    lm::ModelHyper hyper;
    hyper.dim = table.dim;
    hyper.heads = o.heads;
    hyper.ff_dim = o.ff_dim;
    hyper.max_seq = o.max_seq;
    hyper.dropout = o.dropout;

    auto train_set = encode_dataset(data::load_labeled(o.train_file), table.vocab,
                                    o.max_seq);
    auto val_set = encode_dataset(data::load_labeled(o.val_file), table.vocab,
                                  o.max_seq);

    lm::TransformerModel model =
        lm::TransformerModel::init(std::move(table), o.blocks, hyper, o.common.seed);

    lm::TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.learning_rate = o.lr;
    cfg.weight_decay = o.weight_decay;
    cfg.seed = o.common.seed;
    lm::TrainResult result = lm::train_model(model, train_set, val_set, cfg);

    io::save_model(model, o.out_file);
    if (!o.history_file.empty()) io::write_train_history(o.history_file, result.history);
    std::cout << "wrote " << o.out_file << "\n";
    std::printf("val_accuracy=%.4f (best epoch %d)\n",
                lm::evaluate_accuracy(model, val_set), result.best_epoch);
    return 0;
}

// ---- distances / neighbors ---------------------------------------------------

int run_distances(const std::string& table_file, const std::string& pairs_file,
                  const std::string& norm, const std::string& out_file) {
    embed::EmbeddingTable table = io::load_embedding(table_file);
    const embed::Norm n = norm == "l2" ? embed::Norm::L2 : embed::Norm::LInf;
    std::ostringstream body;
    body << "left\tright\tdistance\n";
    body.precision(17);
    for (const embed::WordPair& p : io::load_pairs(pairs_file))
        body << p.left << '\t' << p.right << '\t' << embed::pair_distance(table, p, n)
             << '\n';
    if (out_file.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream out(out_file);
        if (!out) throw ParseError("cannot open file for writing", out_file);
        out << body.str();
        std::cout << "wrote " << out_file << "\n";
    }
    return 0;
}

int run_neighbors(const std::string& table_file, const std::vector<std::string>& anchors,
                  std::size_t k, const std::string& out_file) {
    embed::EmbeddingTable table = io::load_embedding(table_file);
    std::ostringstream body;
    body << "anchor\tneighbor\tdistance\n";
    body.precision(17);
    for (const std::string& anchor : anchors) {
        embed::NeighborSet ns = embed::nearest_neighbors(table, anchor, k);
        for (const auto& [tok, dist] : ns.neighbors)
            body << anchor << '\t' << tok << '\t' << dist << '\n';
    }
    if (out_file.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream out(out_file);
        if (!out) throw ParseError("cannot open file for writing", out_file);
        out << body.str();
        std::cout << "wrote " << out_file << "\n";
    }
    return 0;
}

// ---- verify ------------------------------------------------------------------

struct VerifyOpts {
    CommonOpts common;
    std::string model_file, dataset_file, anchors_file, report_file, csv_file;
    std::size_t k = 50;
    int positions = -1;  // perturb the first N non-PAD positions; -1 = all
    verify::SearchParams search;
    std::size_t order_cap = 50;
};

verify::PerturbationSpec spec_for(const std::vector<int>& ids, int positions,
                                  std::size_t order_cap) {
    verify::PerturbationSpec spec;
    spec.order_cap_multiplier = order_cap;
    if (positions >= 0) {
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < ids.size() && keep.size() < static_cast<std::size_t>(positions); ++i)
            if (ids[i] != lm::Vocab::kPadId) keep.push_back(i);
        spec.positions = std::move(keep);
    }
    return spec;
}

int run_verify(const VerifyOpts& o) {
    lm::TransformerModel model = io::load_model(o.model_file);
    auto records = data::load_labeled(o.dataset_file);
    if (records.empty()) {
        std::cerr << "error: no sentences in " << o.dataset_file << "\n";
        return 1;
    }

    const auto anchors = io::load_wordlist(o.anchors_file);
    verify::ThresholdReport threshold =
        verify::compute_threshold(model.embedding, anchors, o.k);

    std::vector<std::vector<int>> sequences;
    std::vector<std::vector<std::string>> tokens;
    for (const data::LabeledText& r : records) {
        sequences.push_back(lm::tokenize(r.text, model.embedding.vocab,
                                         model.hyper.max_seq));
        tokens.push_back(lm::subword_tokenize(r.text, model.embedding.vocab));
    }

    // Per-sentence perturbation position sets depend on the sentence, so the
    // dataset driver is called with a uniform spec when all positions are
    // perturbed, and sentence-by-sentence otherwise.
    verify::FairnessReport report;
    if (o.positions < 0) {
        report = verify::verify_dataset(model, sequences, tokens, threshold.d,
                                        spec_for(sequences[0], -1, o.order_cap),
                                        o.search, o.common.threads);
    } else {
        VecD radii;
        std::vector<verify::RadiusResult> rr(sequences.size());
        for (std::size_t i = 0; i < sequences.size(); ++i)
            rr[i] = verify::max_verifiable_radius(
                model, sequences[i], spec_for(sequences[i], o.positions, o.order_cap),
                o.search);
        report.threshold_d = threshold.d;
        std::vector<bool> flags;
        for (std::size_t i = 0; i < sequences.size(); ++i) {
            verify::FairnessReport::Sentence s;
            s.index = i;
            s.tokens = tokens[i];
            s.eps_max = rr[i].eps_max;
            s.capped = rr[i].capped;
            s.certified = threshold.d <= s.eps_max;
            if (rr[i].none_found)
                s.failure = verify::to_string(rr[i].certificate.failure);
            const lm::Prediction pred = lm::forward(model, sequences[i]);
            s.margin_at_zero = pred.logits[static_cast<std::size_t>(pred.label)] -
                               pred.logits[static_cast<std::size_t>(1 - pred.label)];
            if (s.certified) ++report.certified_count;
            flags.push_back(s.certified);
            report.sentences.push_back(std::move(s));
        }
        report.psi = verify::fairness_score(flags);
    }

    verify::write_report_json(report, o.report_file);
    if (!o.csv_file.empty()) verify::write_radar_csv(report, o.csv_file);
    std::printf("fairness_score=%.2f\n", report.psi);
    std::cout << "wrote " << o.report_file << "\n";
    return 0;
}

// ---- brute force ---------------------------------------------------------------

int run_brute_force(const std::string& model_file, const std::string& dataset_file,
                    const std::string& synonyms_file, std::uint64_t cap,
                    const std::string& out_file) {
    lm::TransformerModel model = io::load_model(model_file);
    auto records = data::load_labeled(dataset_file);
    if (records.empty()) {
        std::cerr << "error: no sentences in " << dataset_file << "\n";
        return 1;
    }
    data::SynonymMap synonyms = data::load_synonyms(synonyms_file);

    std::ostringstream body;
    body << "sentence_index\trobust\tcombinations_note\n";
    std::size_t robust_count = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::vector<int> ids =
            lm::tokenize(records[i].text, model.embedding.vocab, model.hyper.max_seq);
        std::vector<std::vector<int>> subs(ids.size());
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (ids[p] == lm::Vocab::kPadId) continue;
            const std::string& tok = model.embedding.vocab.token(ids[p]);
            auto it = synonyms.entries.find(tok);
            if (it == synonyms.entries.end()) continue;
            for (const std::string& alt : it->second)
                if (model.embedding.vocab.contains(alt))  // single-token alternatives only
                    subs[p].push_back(model.embedding.vocab.id(alt));
        }
        std::string note;
        bool robust = false;
        try {
            robust = verify::brute_force_certify(model, ids, subs, cap);
        } catch (const ResourceError&) {
            note = "cap-exceeded";
        }
        if (robust) ++robust_count;
        body << i << '\t' << (robust ? 1 : 0) << '\t' << note << '\n';
    }
    if (!out_file.empty()) {
        std::ofstream out(out_file);
        if (!out) throw ParseError("cannot open file for writing", out_file);
        out << body.str();
        std::cout << "wrote " << out_file << "\n";
    } else {
        std::cout << body.str();
    }
    std::printf("robust=%zu/%zu\n", robust_count, records.size());
    return 0;
}

// ---- ablate -------------------------------------------------------------------

int run_ablate(const std::vector<std::string>& model_files,
               const std::vector<std::size_t>& ks, const std::string& dataset_file,
               const std::string& anchors_file, const std::string& out_dir,
               const CommonOpts& common, const verify::SearchParams& search) {
    std::filesystem::create_directories(out_dir);
    auto records = data::load_labeled(dataset_file);
    if (records.empty()) {
        std::cerr << "error: no sentences in " << dataset_file << "\n";
        return 1;
    }
    const auto anchors = io::load_wordlist(anchors_file);

    std::ofstream summary(std::filesystem::path(out_dir) / "summary.csv");
    if (!summary) throw ParseError("cannot open file for writing", out_dir);
    summary << "model,k,threshold_D,fairness_score,error\n";
    summary.precision(17);

    for (const std::string& mf : model_files) {
        const std::string stem = std::filesystem::path(mf).stem().string();
        std::string model_error;
        lm::TransformerModel model;
        try {
            model = io::load_model(mf);
        } catch (const Error& e) {
            model_error = e.what();
        }

        VecD radii;
        if (model_error.empty()) {
            std::vector<std::vector<int>> sequences;
            std::vector<std::vector<std::string>> tokens;
            for (const data::LabeledText& r : records) {
                sequences.push_back(lm::tokenize(r.text, model.embedding.vocab,
                                                 model.hyper.max_seq));
                tokens.push_back({});
            }
            // radii do not depend on k; compute once per model
            verify::FairnessReport base = verify::verify_dataset(
                model, sequences, tokens, 0.0, {}, search, common.threads);
            std::ofstream radii_csv(std::filesystem::path(out_dir) /
                                    ("radii_" + stem + ".csv"));
            radii_csv << "sentence_index,eps_max\n";
            radii_csv.precision(17);
            for (const auto& s : base.sentences) {
                radii.push_back(s.eps_max);
                radii_csv << s.index << ',' << s.eps_max << '\n';
            }
        }

        for (std::size_t k : ks) {
            if (!model_error.empty()) {
                summary << stem << ',' << k << ",,," << "model: " << model_error << '\n';
                continue;
            }
            try {
                verify::ThresholdReport th =
                    verify::compute_threshold(model.embedding, anchors, k);
                verify::FairnessReport rep = verify::fairness_from_radii(radii, th.d);
                summary << stem << ',' << k << ',' << th.d << ',' << rep.psi << ",\n";
            } catch (const Error& e) {
                summary << stem << ',' << k << ",,," << e.what() << '\n';
            }
        }
    }
    std::cout << "wrote " << out_dir << "/summary.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness certification toolkit for small transformer classifiers"};
    app.require_subcommand(1);

    PretrainOpts po;
    CLI::App* pretrain = app.add_subcommand(
        "pretrain", "contrastive embedding pre-training (clustering + general phase)");
    add_common(pretrain, po.common);
    pretrain->add_option("--vocab", po.vocab_file, "vocabulary file, one token per line")
        ->required();
    pretrain->add_option("--dim", po.dim, "embedding dimension");
    pretrain->add_option("--pairs1", po.pairs1, "clustering-phase pair file")->required();
    pretrain->add_option("--alpha1", po.alpha1, "clustering-phase attraction weight");
    pretrain->add_option("--margin1", po.margin1, "clustering-phase margin");
    pretrain->add_option("--epochs1", po.epochs1, "clustering-phase epochs");
    pretrain->add_option("--pairs2", po.pairs2, "general-phase pair file (optional)");
    pretrain->add_option("--alpha2", po.alpha2, "general-phase attraction weight");
    pretrain->add_option("--margin2", po.margin2, "general-phase margin");
    pretrain->add_option("--epochs2", po.epochs2, "general-phase epochs");
    pretrain->add_option("--lr", po.lr, "learning rate");
    pretrain->add_option("--batch", po.batch, "batch size");
    pretrain->add_option("--out", po.out_file, "output table file")->required();
    pretrain->add_option("--history", po.history_file, "loss history CSV");

    TrainOpts to;
    CLI::App* train = app.add_subcommand("train", "train the transformer classifier");
    add_common(train, to.common);
    train->add_option("--table", to.table_file, "pre-trained embedding table")->required();
    train->add_option("--train", to.train_file, "training set (label<TAB>text)")->required();
    train->add_option("--val", to.val_file, "validation set")->required();
    train->add_option("--out", to.out_file, "output model file")->required();
    train->add_option("--history", to.history_file, "training history CSV");
    train->add_option("--blocks", to.blocks, "encoder blocks");
    train->add_option("--heads", to.heads, "attention heads");
    train->add_option("--ff-dim", to.ff_dim, "feed-forward width");
    train->add_option("--max-seq", to.max_seq, "sequence length");
    train->add_option("--dropout", to.dropout, "dropout rate");
    train->add_option("--epochs", to.epochs, "training epochs");
    train->add_option("--batch", to.batch, "batch size");
    train->add_option("--lr", to.lr, "learning rate");
    train->add_option("--weight-decay", to.weight_decay, "decoupled weight decay");

    std::string d_table, d_pairs, d_norm = "linf", d_out;
    CLI::App* distances = app.add_subcommand("distances", "pairwise embedding distances");
    distances->add_option("--table", d_table)->required();
    distances->add_option("--pairs", d_pairs)->required();
    distances->add_option("--norm", d_norm)->check(CLI::IsMember({"linf", "l2"}));
    distances->add_option("--out", d_out);

    std::string n_table, n_out;
    std::vector<std::string> n_anchors;
    std::size_t n_k = 50;
    CLI::App* neighbors = app.add_subcommand("neighbors", "nearest embedding neighbors");
    neighbors->add_option("--table", n_table)->required();
    neighbors->add_option("--anchor", n_anchors, "anchor token (repeatable)")->required();
    neighbors->add_option("-k,--k", n_k, "neighborhood size");
    neighbors->add_option("--out", n_out);

    VerifyOpts vo;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify", "certify a dataset and compute the fairness score");
    add_common(verify_cmd, vo.common);
    verify_cmd->add_option("--model", vo.model_file)->required();
    verify_cmd->add_option("--dataset", vo.dataset_file)->required();
    verify_cmd->add_option("--anchors", vo.anchors_file, "anchor word list")->required();
    verify_cmd->add_option("-k,--k", vo.k, "neighborhood size for the threshold D");
    verify_cmd->add_option("--out", vo.report_file, "report JSON")->required();
    verify_cmd->add_option("--csv", vo.csv_file, "radar CSV");
    verify_cmd->add_option("--positions", vo.positions,
                           "perturb only the first N non-PAD positions (-1 = all)");
    verify_cmd->add_option("--eps-init", vo.search.eps_hi_init);
    verify_cmd->add_option("--eps-cap", vo.search.eps_cap);
    verify_cmd->add_option("--abs-tol", vo.search.abs_tol);
    verify_cmd->add_option("--order-cap", vo.order_cap,
                           "generator budget multiplier per block");

    std::string bf_model, bf_dataset, bf_synonyms, bf_out;
    std::uint64_t bf_cap = 1000000;
    CLI::App* brute = app.add_subcommand(
        "brute-force", "exhaustive synonym-substitution robustness check");
    brute->add_option("--model", bf_model)->required();
    brute->add_option("--dataset", bf_dataset)->required();
    brute->add_option("--synonyms", bf_synonyms)->required();
    brute->add_option("--cap", bf_cap, "combination budget");
    brute->add_option("--out", bf_out);

    CommonOpts ac;
    std::vector<std::string> a_models;
    std::vector<std::size_t> a_ks;
    std::string a_dataset, a_anchors, a_out_dir;
    verify::SearchParams a_search;
    CLI::App* ablate = app.add_subcommand(
        "ablate", "fairness-score sweep over models and neighborhood sizes");
    add_common(ablate, ac);
    ablate->add_option("--model", a_models, "model file (repeatable)")->required();
    ablate->add_option("-k,--k", a_ks, "neighborhood size (repeatable)")->required();
    ablate->add_option("--dataset", a_dataset)->required();
    ablate->add_option("--anchors", a_anchors)->required();
    ablate->add_option("--out-dir", a_out_dir)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) return run_pretrain(po);
        if (train->parsed()) return run_train(to);
        if (distances->parsed()) return run_distances(d_table, d_pairs, d_norm, d_out);
        if (neighbors->parsed()) return run_neighbors(n_table, n_anchors, n_k, n_out);
        if (verify_cmd->parsed()) return run_verify(vo);
        if (brute->parsed())
            return run_brute_force(bf_model, bf_dataset, bf_synonyms, bf_cap, bf_out);
        if (ablate->parsed())
            return run_ablate(a_models, a_ks, a_dataset, a_anchors, a_out_dir, ac,
                              a_search);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
