#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"

namespace dbmnet {

enum class FeatureStage { pre, post };  // f vs f_hat

struct FeatureMatrix {
    int64_t n = 0;
    int64_t d = 0;
    std::vector<float> rows;  // n x d, row-major
    std::vector<int> action_ids;
    std::vector<int> view_ids;
    FeatureStage stage = FeatureStage::pre;

    std::span<const float> row(int64_t i) const {
        return {rows.data() + i * d, static_cast<size_t>(d)};
    }
};

FeatureMatrix extract_features(const Checkpoint& ckpt, const Dataset& data, FeatureStage stage);

// Nearest-class-centroid classifier under Euclidean distance.
struct MdcModel {
    int64_t d = 0;
    int num_classes = 0;
    std::vector<float> centroids;  // num_classes x d
};

// Throws EmptyClassError if any class id in [0, num_classes) has no rows.
MdcModel mdc_fit(const FeatureMatrix& features, std::span<const int> labels, int num_classes);

// argmin distance; ties go to the lower class id.
std::vector<int> mdc_predict(const MdcModel& model, const FeatureMatrix& features);

double mdc_accuracy(const MdcModel& model, const FeatureMatrix& features,
                    std::span<const int> labels);  // percent

struct ViewDropReport {
    double acc_pre = 0;   // MDC_f view accuracy, percent
    double acc_post = 0;  // MDC_fhat view accuracy, percent
    double drop = 0;      // acc_pre - acc_post, points
};

// Paired protocol: MDC_f is fit on pre-stage train features and scored on
// pre-stage validation features; MDC_fhat likewise on the post stage.
ViewDropReport probe_view_drop(const Checkpoint& ckpt, const Dataset& train_data,
                               const Dataset& val_data);

// CSV: header action_id,view_id,f0..f{D-1}; one row per sample.
void export_embeddings(const FeatureMatrix& features, const std::filesystem::path& path);

}  // namespace dbmnet
