#pragma once

#include <string>
#include <vector>

#include "faircert/embedding.hpp"
#include "faircert/training.hpp"
#include "faircert/transformer.hpp"

namespace faircert::io {

// JSON documents; doubles are printed in shortest round-trip form, so
// save → load is value-exact for 64-bit floats. Schemas are described in
// docs/formats.md.

void save_embedding(const embed::EmbeddingTable& table, const std::string& path);
embed::EmbeddingTable load_embedding(const std::string& path);

void save_model(const lm::TransformerModel& model, const std::string& path);
lm::TransformerModel load_model(const std::string& path);

/// `left<TAB>right<TAB>label` lines.
std::vector<embed::WordPair> load_pairs(const std::string& path);

/// One token per line; blank lines skipped.
std::vector<std::string> load_wordlist(const std::string& path);

/// Per-epoch loss history as CSV `phase,epoch,loss`.
void write_loss_history(const std::string& path,
                        const std::vector<std::pair<std::string, VecD>>& phases);

/// Training history as CSV `epoch,train_loss,val_loss,val_accuracy,lr`.
void write_train_history(const std::string& path,
                         const std::vector<lm::EpochStats>& history);

}  // namespace faircert::io
