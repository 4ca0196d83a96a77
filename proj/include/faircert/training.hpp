#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "faircert/transformer.hpp"

namespace faircert::lm {

struct PlateauConfig {
    double factor = 0.5;
    int patience = 3;
    double min_lr = 1e-6;
};

struct EarlyStopConfig {
    int patience = 10;
    bool restore_best = true;
};

struct FocalConfig {
    double alpha = 0.25;
    double gamma = 2.0;
};

struct TrainConfig {
    int epochs = 100;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    PlateauConfig plateau;
    EarlyStopConfig early_stop;
    FocalConfig focal;
    std::uint64_t seed = 0;

    void check() const;
};

/// Validation-loss plateau scheduler with Keras ReduceLROnPlateau semantics:
/// the rate is halved (times `factor`) once `patience` consecutive epochs
/// fail to improve the best seen loss, floored at min_lr.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, PlateauConfig cfg)
        : lr_(initial_lr), cfg_(cfg) {}

    double observe(double val_loss);
    double lr() const { return lr_; }

private:
    double lr_;
    PlateauConfig cfg_;
    double best_ = 1e300;
    int wait_ = 0;
};

/// Stops after `patience` consecutive non-improving epochs; remembers which
/// epoch held the best validation loss so its weights can be restored.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when training should stop. `improved()` is true right
    /// after an observe() that lowered the best loss.
    bool observe(double val_loss);
    bool improved() const { return improved_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double best_ = 1e300;
    int wait_ = 0;
    int epoch_ = -1;
    int best_epoch_ = -1;
    bool improved_ = false;
};

struct EncodedExample {
    int label = 0;
    std::vector<int> ids;  // padded to max_seq
};

/// Gradients of all trainable tensors (the embedding is frozen and has none).
struct ModelGrads {
    struct BlockGrads {
        Matrix wq, wk, wv, wo;
        VecD bq, bk, bv, bo;
        VecD ln1_gamma, ln1_beta;
        Matrix ff_w1;
        VecD ff_b1;
        Matrix ff_w2;
        VecD ff_b2;
        VecD ln2_gamma, ln2_beta;
    };
    std::vector<BlockGrads> block;
    Matrix head_w;
    VecD head_b;

    static ModelGrads zeros_like(const TransformerModel& m);
    void scale(double s);
};

/// Flat, stable-ordered views over all trainable tensors (blocks then head).
std::vector<std::span<double>> trainable_views(TransformerModel& m);
std::vector<std::span<double>> grad_views(ModelGrads& g);
VecD snapshot_trainable(const TransformerModel& m);
void restore_trainable(TransformerModel& m, const VecD& snapshot);

/// Backpropagates the focal loss of one traced example; accumulates into `g`
/// and returns the example loss.
double backward_example(const TransformerModel& m, const ForwardTrace& trace,
                        int label, const FocalConfig& focal, ModelGrads& g);

/// Mean focal loss and gradient over a batch (no dropout). Used by training
/// and by the finite-difference gradient check.
double model_batch_gradient(const TransformerModel& m,
                            const std::vector<EncodedExample>& batch,
                            const FocalConfig& focal, ModelGrads& g);

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
};

double evaluate_loss(const TransformerModel& m, const std::vector<EncodedExample>& set,
                     const FocalConfig& focal);
double evaluate_accuracy(const TransformerModel& m,
                         const std::vector<EncodedExample>& set);

/// AdamW training with the plateau scheduler and early stopping. The
/// embedding stays bit-identical; deterministic for a fixed seed.
TrainResult train_model(TransformerModel& model,
                        const std::vector<EncodedExample>& train_set,
                        const std::vector<EncodedExample>& val_set,
                        const TrainConfig& cfg);

}  // namespace faircert::lm
