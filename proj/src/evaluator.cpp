#include "dbmnet/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dbmnet/model.hpp"

namespace dbmnet {

namespace {

using Json = nlohmann::json;

// Rank of the true label with ties broken toward lower class indices:
// 1 + #(classes strictly better or equal-with-lower-index).
int label_rank(const std::vector<float>& logits, int label) {
    int better = 0;
    for (int c = 0; c < static_cast<int>(logits.size()); ++c) {
        if (logits[c] > logits[label] || (logits[c] == logits[label] && c < label)) ++better;
    }
    return better + 1;
}

int argmax_low_tie(const std::vector<float>& logits) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(logits.size()); ++c) {
        if (logits[c] > logits[best]) best = c;
    }
    return best;
}

}  // namespace

double topk_accuracy(std::span<const std::vector<float>> logits, std::span<const int> labels,
                     int k) {
    if (logits.empty()) throw EmptyEvalError("topk_accuracy: empty batch");
    if (logits.size() != labels.size()) throw ShapeError("topk_accuracy: batch size mismatch");
    const int num_classes = static_cast<int>(logits.front().size());
    if (k < 1 || k > num_classes) {
        throw ConfigError("topk_accuracy: k must lie in [1, " + std::to_string(num_classes) + "]");
    }
    int64_t hits = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw LabelError("topk_accuracy: label out of range");
        }
        if (label_rank(logits[i], labels[i]) <= k) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(logits.size());
}

std::vector<std::vector<int64_t>> confusion_matrix(std::span<const int> predictions,
                                                   std::span<const int> truths, int num_classes) {
    if (predictions.size() != truths.size()) throw ShapeError("confusion_matrix: size mismatch");
    std::vector<std::vector<int64_t>> m(num_classes, std::vector<int64_t>(num_classes, 0));
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] < 0 || predictions[i] >= num_classes || truths[i] < 0 ||
            truths[i] >= num_classes) {
            throw LabelError("confusion_matrix: label out of range");
        }
        ++m[truths[i]][predictions[i]];
    }
    return m;
}

namespace {

EvalReport report_from_logits(const std::vector<std::vector<float>>& logits,
                              const std::vector<int>& truths, int num_classes) {
    EvalReport report;
    report.n_samples = static_cast<int64_t>(logits.size());
    report.top1 = topk_accuracy(logits, truths, 1);
    report.top5 = topk_accuracy(logits, truths, std::min(5, num_classes));
    std::vector<int> preds(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) preds[i] = argmax_low_tie(logits[i]);
    report.confusion = confusion_matrix(preds, truths, num_classes);
    report.per_class_accuracy.assign(num_classes, 0.0);
    for (int c = 0; c < num_classes; ++c) {
        const int64_t row_total =
            std::accumulate(report.confusion[c].begin(), report.confusion[c].end(), int64_t{0});
        if (row_total > 0) {
            report.per_class_accuracy[c] =
                100.0 * static_cast<double>(report.confusion[c][c]) / static_cast<double>(row_total);
        }
    }
    return report;
}

std::vector<std::vector<float>> batch_logits(const Checkpoint& ckpt, const Dataset& data) {
    const auto& entries = data.manifest.entries;
    std::vector<std::vector<float>> logits(entries.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int64_t i = 0; i < static_cast<int64_t>(entries.size()); ++i) {
        const Image img = data.store->load(entries[i].source_id, ckpt.model.input_size);
        logits[i] = forward(ckpt.model, ckpt.params, img).z_a;
    }
    return logits;
}

}  // namespace

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data) {
    if (data.manifest.entries.empty()) throw EmptyEvalError("evaluate: empty manifest");
    if (data.manifest.label_space.num_actions() != ckpt.label_space.num_actions()) {
        throw LabelSpaceError(
            "evaluate: manifest action count " +
            std::to_string(data.manifest.label_space.num_actions()) + " != checkpoint's " +
            std::to_string(ckpt.label_space.num_actions()) + " (supply a label map)");
    }
    const auto logits = batch_logits(ckpt, data);
    std::vector<int> truths;
    truths.reserve(data.manifest.entries.size());
    for (const auto& e : data.manifest.entries) truths.push_back(e.action_id);
    return report_from_logits(logits, truths, ckpt.label_space.num_actions());
}

LabelMap LabelMap::identity(int num_classes) {
    LabelMap m;
    m.target_for_source.resize(num_classes);
    std::iota(m.target_for_source.begin(), m.target_for_source.end(), 0);
    return m;
}

void LabelMap::validate(int num_sources, int num_targets) const {
    if (static_cast<int>(target_for_source.size()) < num_sources) {
        throw LabelMapError("label map covers " + std::to_string(target_for_source.size()) +
                            " source classes, dataset has " + std::to_string(num_sources));
    }
    for (int t : target_for_source) {
        if (t != kDrop && (t < 0 || t >= num_targets)) {
            throw LabelMapError("label map target " + std::to_string(t) + " out of range");
        }
    }
}

LabelMap LabelMap::load(const std::filesystem::path& path, const LabelSpace& target_space) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("label map not found: " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw LabelMapError(std::string("label map parse error: ") + e.what());
    }
    const auto& map = j.at("map");
    LabelMap out;
    out.target_for_source.assign(map.size(), kDrop);
    for (auto it = map.begin(); it != map.end(); ++it) {
        const int src = std::stoi(it.key());
        if (src < 0 || src >= static_cast<int>(map.size())) {
            throw LabelMapError("label map source index " + it.key() + " out of range");
        }
        if (it.value().is_string()) {
            const std::string v = it.value().get<std::string>();
            if (v == "DROP") {
                out.target_for_source[src] = kDrop;
            } else {
                // target given by class name
                const auto& actions = target_space.actions;
                const auto found = std::find(actions.begin(), actions.end(), v);
                if (found == actions.end()) {
                    throw LabelMapError("label map target name '" + v + "' not in label space");
                }
                out.target_for_source[src] = static_cast<int>(found - actions.begin());
            }
        } else {
            out.target_for_source[src] = it.value().get<int>();
        }
    }
    return out;
}

EvalReport cross_dataset_eval(const Checkpoint& ckpt, const Dataset& foreign,
                              const LabelMap& label_map, bool restrict_to_mapped) {
    if (foreign.manifest.entries.empty()) throw EmptyEvalError("cross_dataset_eval: empty manifest");
    const int num_targets = ckpt.label_space.num_actions();
    label_map.validate(foreign.manifest.label_space.num_actions(), num_targets);

    // classes that compete in restricted ranking = the image of the map
    std::vector<int> mapped_classes;
    for (int t : label_map.target_for_source) {
        if (t != LabelMap::kDrop) mapped_classes.push_back(t);
    }
    std::sort(mapped_classes.begin(), mapped_classes.end());
    mapped_classes.erase(std::unique(mapped_classes.begin(), mapped_classes.end()),
                         mapped_classes.end());

    std::vector<size_t> kept;
    std::vector<int> truths;
    int64_t dropped = 0;
    for (size_t i = 0; i < foreign.manifest.entries.size(); ++i) {
        const auto& e = foreign.manifest.entries[i];
        if (e.action_id >= static_cast<int>(label_map.target_for_source.size())) {
            throw LabelMapError("unmapped foreign class id " + std::to_string(e.action_id));
        }
        const int target = label_map.target_for_source[e.action_id];
        if (target == LabelMap::kDrop) {
            ++dropped;
            continue;
        }
        kept.push_back(i);
        truths.push_back(target);
    }
    if (kept.empty()) throw EmptyEvalError("cross_dataset_eval: all samples dropped by label map");

    std::vector<std::vector<float>> logits(kept.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int64_t j = 0; j < static_cast<int64_t>(kept.size()); ++j) {
        const auto& e = foreign.manifest.entries[kept[j]];
        const Image img = foreign.store->load(e.source_id, ckpt.model.input_size);
        std::vector<float> z = forward(ckpt.model, ckpt.params, img).z_a;
        if (restrict_to_mapped) {
            // non-competing classes are pushed below every real logit
            const float lowest = *std::min_element(z.begin(), z.end());
            std::vector<float> masked(z.size(), lowest - 1.0f);
            for (int c : mapped_classes) masked[c] = z[c];
            z = std::move(masked);
        }
        logits[j] = std::move(z);
    }

    const int k5 = std::min<int>(5, restrict_to_mapped ? static_cast<int>(mapped_classes.size())
                                                       : num_targets);
    EvalReport report;
    report.n_samples = static_cast<int64_t>(kept.size());
    report.n_dropped = dropped;
    report.restricted_ranking = restrict_to_mapped;
    report.top1 = topk_accuracy(logits, truths, 1);
    report.top5 = topk_accuracy(logits, truths, k5);
    std::vector<int> preds(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) preds[i] = argmax_low_tie(logits[i]);
    report.confusion = confusion_matrix(preds, truths, num_targets);
    report.per_class_accuracy.assign(num_targets, 0.0);
    for (int c = 0; c < num_targets; ++c) {
        const int64_t row_total =
            std::accumulate(report.confusion[c].begin(), report.confusion[c].end(), int64_t{0});
        if (row_total > 0) {
            report.per_class_accuracy[c] =
                100.0 * static_cast<double>(report.confusion[c][c]) / static_cast<double>(row_total);
        }
    }
    return report;
}

void write_report_json(const EvalReport& report, const LabelSpace& labels,
                       const std::filesystem::path& path) {
    Json j;
    j["top1"] = report.top1;
    j["top5"] = report.top5;
    j["n_samples"] = report.n_samples;
    j["n_dropped"] = report.n_dropped;
    j["restricted_ranking"] = report.restricted_ranking;
    j["per_class_accuracy"] = report.per_class_accuracy;
    j["classes"] = labels.actions;
    j["confusion"] = report.confusion;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

void write_confusion_csv(const EvalReport& report, const LabelSpace& labels,
                         const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (size_t c = 0; c < labels.actions.size(); ++c) {
        out << (c ? "," : "") << labels.actions[c];
    }
    out << "\n";
    for (const auto& row : report.confusion) {
        for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << "\n";
    }
    if (!out) throw IoError("short write: " + path.string());
}

LocoReport run_loco(const Dataset& data, const TrainConfig& cfg, double val_fraction,
                    const std::filesystem::path& run_dir, uint64_t split_seed) {
    data.manifest.validate();
    const auto& labels = data.manifest.label_space;
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());

    LocoReport loco;
    for (int v = 0; v < labels.num_views(); ++v) {
        const LocoSplit split = split_loco(data.manifest, v, val_fraction, split_seed);
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = mix_seed(cfg.seed, 0x10c0 + static_cast<uint64_t>(v));
        const TrainResult tr = train(fold_cfg, {split.train, data.store}, {split.val, data.store});
        const EvalReport report = evaluate(tr.best, {split.test, data.store});

        const auto fold_dir = run_dir / ("fold_" + labels.views[v]);
        std::filesystem::create_directories(fold_dir, ec);
        if (ec) throw IoError("cannot create " + fold_dir.string() + ": " + ec.message());
        save_checkpoint(tr.best, fold_dir / "checkpoint.bin");
        write_metrics_log(tr.log, fold_dir / "metrics.log");
        write_report_json(report, labels, fold_dir / "report.json");
        write_confusion_csv(report, labels, fold_dir / "confusion.csv");

        loco.folds.push_back({labels.views[v], report});
        loco.mean_top1 += report.top1;
        loco.mean_top5 += report.top5;
    }
    loco.mean_top1 /= labels.num_views();
    loco.mean_top5 /= labels.num_views();

    Json summary;
    summary["mean_top1"] = loco.mean_top1;
    summary["mean_top5"] = loco.mean_top5;
    for (const auto& fold : loco.folds) {
        summary["folds"][fold.held_out_view] = {{"top1", fold.report.top1},
                                                {"top5", fold.report.top5},
                                                {"n_samples", fold.report.n_samples}};
    }
    std::ofstream out(run_dir / "loco_report.json", std::ios::trunc);
    if (!out) throw IoError("cannot write loco_report.json");
    out << summary.dump(2) << "\n";
    return loco;
}

}  // namespace dbmnet
