#include "dbmnet/sampler.hpp"

#include <algorithm>
#include <set>

#include "dbmnet/errors.hpp"

namespace dbmnet {

SampleabilityReport validate_sampleability(const DatasetManifest& manifest) {
    const int A = manifest.label_space.num_actions();
    const int V = manifest.label_space.num_views();
    std::vector<std::set<int>> actions_in_view(V);
    std::vector<std::set<int>> views_of_action(A);
    for (const auto& e : manifest.entries) {
        actions_in_view[e.view_id].insert(e.action_id);
        views_of_action[e.action_id].insert(e.view_id);
    }
    SampleabilityReport report;
    for (int v = 0; v < V; ++v) {
        if (actions_in_view[v].size() < 2) report.views_lacking_actions.push_back(v);
    }
    for (int a = 0; a < A; ++a) {
        if (views_of_action[a].size() < 2) report.actions_lacking_views.push_back(a);
    }
    return report;
}

std::string SampleabilityReport::describe(const LabelSpace& labels) const {
    if (ok()) return "sampleable";
    std::string msg = "manifest is not triplet-sampleable:";
    for (int v : views_lacking_actions) {
        msg += " view '" + labels.views[v] + "' has < 2 distinct actions;";
    }
    for (int a : actions_lacking_views) {
        msg += " action '" + labels.actions[a] + "' appears in < 2 views;";
    }
    return msg;
}

TripletSampler::TripletSampler(const DatasetManifest& manifest, bool balanced_anchors)
    : manifest_(&manifest), balanced_anchors_(balanced_anchors) {
    const auto report = validate_sampleability(manifest);
    if (!report.ok()) throw UnsampleableError(report.describe(manifest.label_space));

    const int A = manifest.label_space.num_actions();
    const int V = manifest.label_space.num_views();
    by_view_.assign(V, {});
    by_action_.assign(A, {});
    for (int32_t i = 0; i < static_cast<int32_t>(manifest.entries.size()); ++i) {
        by_view_[manifest.entries[i].view_id].push_back(i);
        by_action_[manifest.entries[i].action_id].push_back(i);
    }
    // Sort each view's pool by action (stable on manifest order) and record
    // the contiguous block of every action, and symmetrically for actions.
    view_action_block_.assign(V, std::vector<Block>(A));
    for (int v = 0; v < V; ++v) {
        auto& pool = by_view_[v];
        std::stable_sort(pool.begin(), pool.end(), [&](int32_t l, int32_t r) {
            return manifest.entries[l].action_id < manifest.entries[r].action_id;
        });
        for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
            auto& block = view_action_block_[v][manifest.entries[pool[i]].action_id];
            if (block.count == 0) block.begin = i;
            ++block.count;
        }
    }
    action_view_block_.assign(A, std::vector<Block>(V));
    for (int a = 0; a < A; ++a) {
        auto& pool = by_action_[a];
        std::stable_sort(pool.begin(), pool.end(), [&](int32_t l, int32_t r) {
            return manifest.entries[l].view_id < manifest.entries[r].view_id;
        });
        for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
            auto& block = action_view_block_[a][manifest.entries[pool[i]].view_id];
            if (block.count == 0) block.begin = i;
            ++block.count;
        }
    }
}

int32_t TripletSampler::draw_anchor(Rng& rng) const {
    if (!balanced_anchors_) {
        return static_cast<int32_t>(rng.uniform_int(manifest_->entries.size()));
    }
    const auto action = rng.uniform_int(by_action_.size());
    const auto& pool = by_action_[action];
    return pool[rng.uniform_int(pool.size())];
}

int32_t TripletSampler::draw_excluding(const std::vector<int32_t>& pool, const Block& excluded,
                                       Rng& rng) const {
    const auto available = pool.size() - excluded.count;
    auto k = static_cast<int>(rng.uniform_int(available));
    if (k >= excluded.begin) k += excluded.count;
    return pool[k];
}

TripletBatch TripletSampler::sample(int batch_size, Rng& rng) const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    TripletBatch batch;
    batch.triplets.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        TripletIndices t;
        t.anchor = draw_anchor(rng);
        const auto& e = manifest_->entries[t.anchor];
        t.same_view = draw_excluding(by_view_[e.view_id], view_action_block_[e.view_id][e.action_id], rng);
        t.same_action =
            draw_excluding(by_action_[e.action_id], action_view_block_[e.action_id][e.view_id], rng);
        batch.triplets.push_back(t);
    }
    return batch;
}

}  // namespace dbmnet
