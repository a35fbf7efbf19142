#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbmnet/dataset.hpp"
#include "dbmnet/rng.hpp"

namespace dbmnet {

// Triplet sampling needs every view to contain >= 2 distinct actions and
// every action to appear in >= 2 distinct views.
struct SampleabilityReport {
    std::vector<int> views_lacking_actions;  // views with < 2 distinct actions
    std::vector<int> actions_lacking_views;  // actions present in < 2 views

    bool ok() const { return views_lacking_actions.empty() && actions_lacking_views.empty(); }
    std::string describe(const LabelSpace& labels) const;
};

SampleabilityReport validate_sampleability(const DatasetManifest& manifest);

// Indices into the manifest entry list.
struct TripletIndices {
    int32_t anchor = 0;
    int32_t same_view = 0;    // equal view, different action
    int32_t same_action = 0;  // equal action, different view
};

struct TripletBatch {
    std::vector<TripletIndices> triplets;
};

// Precomputed per-view / per-action index tables over one manifest. Sampling
// is O(1) per member and deterministic given the rng state. A sampler is not
// shared across threads; build one per stream.
class TripletSampler {
public:
    // Throws UnsampleableError (carrying the diagnostic) if the manifest
    // cannot satisfy the triplet constraints.
    explicit TripletSampler(const DatasetManifest& manifest, bool balanced_anchors = false);

    TripletBatch sample(int batch_size, Rng& rng) const;

    const DatasetManifest& manifest() const { return *manifest_; }

private:
    struct Block {
        int begin = 0;
        int count = 0;
    };

    int32_t draw_anchor(Rng& rng) const;
    int32_t draw_excluding(const std::vector<int32_t>& pool, const Block& excluded, Rng& rng) const;

    const DatasetManifest* manifest_;
    bool balanced_anchors_;
    // entries of view v sorted by action; block of action a within it
    std::vector<std::vector<int32_t>> by_view_;
    std::vector<std::vector<Block>> view_action_block_;
    // entries of action a sorted by view; block of view v within it
    std::vector<std::vector<int32_t>> by_action_;
    std::vector<std::vector<Block>> action_view_block_;
};

}  // namespace dbmnet
