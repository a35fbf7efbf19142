#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"
#include "dbmnet/trainer.hpp"

namespace dbmnet {

struct EvalReport {
    double top1 = 0;  // percent
    double top5 = 0;  // percent, k = min(5, A)
    std::vector<std::vector<int64_t>> confusion;  // [truth][prediction]
    int64_t n_samples = 0;
    std::vector<double> per_class_accuracy;  // percent; 0 for absent classes
    int64_t n_dropped = 0;       // cross-dataset: foreign samples mapped to DROP
    bool restricted_ranking = false;  // cross-dataset ranking mode used
};

// Percentage of samples whose true label ranks within the k highest logits.
// Ties broken by lower class index. Throws EmptyEvalError on an empty batch.
double topk_accuracy(std::span<const std::vector<float>> logits, std::span<const int> labels,
                     int k);

std::vector<std::vector<int64_t>> confusion_matrix(std::span<const int> predictions,
                                                   std::span<const int> truths, int num_classes);

// Deterministic, un-augmented evaluation at the checkpoint's input size.
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data);

// Maps foreign action ids into the checkpoint's action space; kDrop excludes.
struct LabelMap {
    static constexpr int kDrop = -1;
    std::vector<int> target_for_source;

    static LabelMap identity(int num_classes);
    static LabelMap load(const std::filesystem::path& path, const LabelSpace& target_space);
    void validate(int num_sources, int num_targets) const;
};

// Inference on a foreign dataset through a label map. With restrict_to_mapped
// (the default) only the mapped target classes compete in the ranking;
// otherwise all A logits do.
EvalReport cross_dataset_eval(const Checkpoint& ckpt, const Dataset& foreign,
                              const LabelMap& label_map, bool restrict_to_mapped = true);

struct LocoFold {
    std::string held_out_view;
    EvalReport report;
};

struct LocoReport {
    std::vector<LocoFold> folds;  // in label-space view order
    double mean_top1 = 0;
    double mean_top5 = 0;
};

// Full leave-one-camera-out round: for every view, split, train on the rest,
// evaluate on the held-out view. Artifacts are persisted under
//   run_dir/fold_<view>/{checkpoint.bin, metrics.log, report.json,
//   confusion.csv}
// plus run_dir/loco_report.json. Per-fold seeds derive from cfg.seed.
LocoReport run_loco(const Dataset& data, const TrainConfig& cfg, double val_fraction,
                    const std::filesystem::path& run_dir, uint64_t split_seed = kDefaultSplitSeed);

void write_report_json(const EvalReport& report, const LabelSpace& labels,
                       const std::filesystem::path& path);
void write_confusion_csv(const EvalReport& report, const LabelSpace& labels,
                         const std::filesystem::path& path);

}  // namespace dbmnet
