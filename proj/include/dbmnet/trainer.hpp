#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"
#include "dbmnet/losses.hpp"
#include "dbmnet/model.hpp"

namespace dbmnet {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_drop_epochs = {10, 30};
    double lr_drop_factor = 10.0;
    uint64_t seed = 1;
    LossWeights loss;
    bool stop_gradient_pv = false;
    int input_size = 32;
    int feature_dim = 64;
    bool augment = true;
    bool balanced_anchors = false;
    // Weight decay applies to conv and head weight matrices; decaying the
    // view queries fights the identity-gate prior, so it is off by default.
    bool decay_queries = false;
    // Freezes Q at all-ones and excludes it from updates; with lambda_ac =
    // lambda_vc = 0 this reduces training to a plain two-head cross-entropy
    // classifier (the "neither" ablation).
    bool identity_gate = false;

    void validate() const;
    std::map<std::string, std::string> snapshot() const;
};

// Effective learning rate at a (0-based) epoch under the step schedule.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    LossBreakdown loss;  // means over the epoch's steps
    double val_top1 = 0;
    double val_top5 = 0;
    double wall_time_s = 0;
};

struct TrainResult {
    Checkpoint best;  // best validation top-1 epoch; earliest wins ties
    std::vector<EpochRecord> log;
};

// Momentum SGD over triplet batches:
//   v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v
// Deterministic given (config, seed, data). Throws UnsampleableError up
// front and DivergedError (naming the step) if the loss goes non-finite.
TrainResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& val_data);

// One SGD update over all parameters; exposed for direct testing.
void sgd_step(const TrainConfig& cfg, double lr, ModelParams<float>& params,
              const ModelParams<float>& grads, ModelParams<float>& velocity);

// Metrics log: one line-delimited JSON record per epoch with fields
// {epoch, lr, l_ace, l_vce, l_ac, l_vc, total, val_top1, val_top5,
//  wall_time_s}. wall_time_s is the only non-reproducible field.
void write_metrics_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);

struct GradCheckOptions {
    double epsilon = 1e-5;
    // Above this parameter count, check a deterministic random subsample.
    int64_t max_exhaustive = 5000;
    int64_t sample_count = 500;
    uint64_t seed = 0;
    // Fault-injection hook: adds corrupt_delta to every analytic gradient of
    // the named tensor before comparison.
    std::string corrupt_param;
    double corrupt_delta = 0.0;
    TermGains gains;  // cross-entropy gains; neutral by default
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_parameter;  // "name[flat_index]"
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int64_t checked = 0;
};

// Central finite differences against the analytic gradient, in double
// precision. Relative error denominator: max(|analytic|, |numeric|, 1e-8).
// In stop-gradient mode the oracle evaluates the same severed objective by
// freezing each member's gate probabilities at the base parameter point.
GradCheckReport gradient_check(const ModelConfig& cfg, const ModelParams<double>& params,
                               std::span<const Image> anchor_images,
                               std::span<const Image> same_view_images,
                               std::span<const Image> same_action_images,
                               std::span<const int> action_labels,
                               std::span<const int> view_labels, const LossWeights& weights,
                               bool stop_gradient_pv, const GradCheckOptions& opts = {});

}  // namespace dbmnet
