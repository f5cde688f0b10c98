#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurosleep/loss.hpp"
#include "neurosleep/metrics.hpp"
#include "neurosleep/model.hpp"
#include "neurosleep/prep.hpp"

namespace nsn {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-3;   // decoupled: theta -= lr*decay*theta before Adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t train_batch = 512;
    std::size_t val_batch = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;    // 0 stops after the first non-improving validation
    std::uint64_t seed = 0;
    WeightScheme scheme = WeightScheme::None;
    std::size_t folds = 20;       // k for subject-wise k-fold
    std::size_t threads = 0;      // 0 = NEUROSLEEP_THREADS env or hardware concurrency

    void validate_or_throw() const;
};

struct OptimizerState {
    std::vector<Tensor> m;  // first moments, shapes mirror the parameters
    std::vector<Tensor> v;  // second moments
    std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const ModelConfig& cfg);

// Standard Adam with bias correction; decay applied outside the moments and
// only to parameters flagged for it in the registry. Throws on NaN gradient.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg);

struct HistoryRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
    double val_kappa = 0.0;  // 0 when undefined
};

struct TrainResult {
    ModelParams best_params;   // lowest validation loss seen
    ModelParams final_params;
    std::vector<HistoryRow> history;
    ClassWeights weights;      // computed from the train split only
    bool diverged = false;
    std::size_t best_epoch = 0;
};

// Batch-level loss and parameter gradients. Deterministic for a given seed
// and dropout_salt regardless of thread count: samples are processed in
// fixed 16-sample blocks, each with its own parameter-leaf copies, and block
// gradients are reduced in block order.
std::pair<double, std::vector<Tensor>> batch_gradients(const ModelParams& params,
                                                       const std::vector<EpochRecord>& epochs,
                                                       const std::vector<std::size_t>& indices,
                                                       const ClassWeights& weights, bool train,
                                                       std::uint64_t dropout_salt,
                                                       std::size_t threads);

TrainResult train(const std::vector<EpochRecord>& train_epochs,
                  const std::vector<EpochRecord>& val_epochs, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg);

// Eval-mode predictions, index-aligned with the input epochs.
std::vector<std::size_t> predict_labels(const ModelParams& params,
                                        const std::vector<EpochRecord>& epochs,
                                        std::size_t threads = 0);

EvalReport evaluate(const ModelParams& params, const std::vector<EpochRecord>& epochs,
                    std::size_t threads = 0);

struct Fold {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

// Subjects (never epochs) are shuffled and partitioned into k folds of
// near-equal subject count; each subject validates in exactly one fold.
std::vector<Fold> subject_kfold_split(const std::vector<EpochRecord>& epochs, std::size_t k,
                                      std::uint64_t seed);

// NSC1 checkpoint: versioned, little-endian, parameters as 64-bit reals in
// registry order. Round trip is bit-exact.
std::vector<std::uint8_t> save_checkpoint(const ModelParams& params);
ModelParams load_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint_file(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint_file(const std::string& path);

std::string history_to_csv(const std::vector<HistoryRow>& history);

std::size_t resolve_threads(std::size_t requested);

}  // namespace nsn
