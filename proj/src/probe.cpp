#include "dbmnet/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dbmnet/model.hpp"

namespace dbmnet {

FeatureMatrix extract_features(const Checkpoint& ckpt, const Dataset& data, FeatureStage stage) {
    if (data.manifest.entries.empty()) throw EmptyEvalError("extract_features: empty manifest");
    FeatureMatrix fm;
    fm.n = static_cast<int64_t>(data.manifest.entries.size());
    fm.d = ckpt.model.feature_dim;
    fm.stage = stage;
    fm.rows.resize(fm.n * fm.d);
    fm.action_ids.resize(fm.n);
    fm.view_ids.resize(fm.n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int64_t i = 0; i < fm.n; ++i) {
        const auto& e = data.manifest.entries[i];
        const Image img = data.store->load(e.source_id, ckpt.model.input_size);
        const ForwardOutput<float> out = forward(ckpt.model, ckpt.params, img);
        const std::vector<float>& src = (stage == FeatureStage::pre) ? out.f : out.f_hat;
        std::copy(src.begin(), src.end(), fm.rows.begin() + i * fm.d);
        fm.action_ids[i] = e.action_id;
        fm.view_ids[i] = e.view_id;
    }
    return fm;
}

MdcModel mdc_fit(const FeatureMatrix& features, std::span<const int> labels, int num_classes) {
    if (features.n == 0) throw EmptyClassError("mdc_fit: no training rows");
    if (static_cast<int64_t>(labels.size()) != features.n) {
        throw ShapeError("mdc_fit: label count mismatch");
    }
    MdcModel model;
    model.d = features.d;
    model.num_classes = num_classes;
    model.centroids.assign(static_cast<size_t>(num_classes) * features.d, 0.0f);
    std::vector<int64_t> counts(num_classes, 0);
    for (int64_t i = 0; i < features.n; ++i) {
        const int c = labels[i];
        if (c < 0 || c >= num_classes) throw LabelError("mdc_fit: label out of range");
        ++counts[c];
        const auto row = features.row(i);
        float* centroid = model.centroids.data() + static_cast<size_t>(c) * features.d;
        for (int64_t k = 0; k < features.d; ++k) centroid[k] += row[k];
    }
    for (int c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) {
            throw EmptyClassError("mdc_fit: class " + std::to_string(c) + " has no training rows");
        }
        float* centroid = model.centroids.data() + static_cast<size_t>(c) * features.d;
        for (int64_t k = 0; k < features.d; ++k) centroid[k] /= static_cast<float>(counts[c]);
    }
    return model;
}

std::vector<int> mdc_predict(const MdcModel& model, const FeatureMatrix& features) {
    if (features.d != model.d) throw ShapeError("mdc_predict: dimension mismatch");
    std::vector<int> preds(features.n);
    for (int64_t i = 0; i < features.n; ++i) {
        const auto row = features.row(i);
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int c = 0; c < model.num_classes; ++c) {
            const float* centroid = model.centroids.data() + static_cast<size_t>(c) * model.d;
            double d2 = 0;
            for (int64_t k = 0; k < model.d; ++k) {
                const double diff = static_cast<double>(row[k]) - centroid[k];
                d2 += diff * diff;
            }
            if (d2 < best_d2) {  // strict: ties stay with the lower class id
                best_d2 = d2;
                best = c;
            }
        }
        preds[i] = best;
    }
    return preds;
}

double mdc_accuracy(const MdcModel& model, const FeatureMatrix& features,
                    std::span<const int> labels) {
    if (features.n == 0) throw EmptyEvalError("mdc_accuracy: empty feature matrix");
    if (static_cast<int64_t>(labels.size()) != features.n) {
        throw ShapeError("mdc_accuracy: label count mismatch");
    }
    const std::vector<int> preds = mdc_predict(model, features);
    int64_t hits = 0;
    for (int64_t i = 0; i < features.n; ++i) {
        if (preds[i] == labels[i]) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(features.n);
}

ViewDropReport probe_view_drop(const Checkpoint& ckpt, const Dataset& train_data,
                               const Dataset& val_data) {
    const int num_views = ckpt.label_space.num_views();
    const FeatureMatrix train_pre = extract_features(ckpt, train_data, FeatureStage::pre);
    const FeatureMatrix val_pre = extract_features(ckpt, val_data, FeatureStage::pre);
    const FeatureMatrix train_post = extract_features(ckpt, train_data, FeatureStage::post);
    const FeatureMatrix val_post = extract_features(ckpt, val_data, FeatureStage::post);

    const MdcModel mdc_pre = mdc_fit(train_pre, train_pre.view_ids, num_views);
    const MdcModel mdc_post = mdc_fit(train_post, train_post.view_ids, num_views);

    ViewDropReport report;
    report.acc_pre = mdc_accuracy(mdc_pre, val_pre, val_pre.view_ids);
    report.acc_post = mdc_accuracy(mdc_post, val_post, val_post.view_ids);
    report.drop = report.acc_pre - report.acc_post;
    return report;
}

void export_embeddings(const FeatureMatrix& features, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "action_id,view_id";
    for (int64_t k = 0; k < features.d; ++k) out << ",f" << k;
    out << "\n";
    char buf[32];
    for (int64_t i = 0; i < features.n; ++i) {
        out << features.action_ids[i] << "," << features.view_ids[i];
        const auto row = features.row(i);
        for (int64_t k = 0; k < features.d; ++k) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[k]));
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("short write: " + path.string());
}

}  // namespace dbmnet
