#pragma once

#include <span>
#include <vector>

#include "dbmnet/model.hpp"

namespace dbmnet {

struct LossWeights {
    double lambda_ac = 1.0;
    double lambda_vc = 1.0;
    double delta = 1.0;  // triplet margin

    void validate() const;
};

// The four terms and their weighted sum:
//   total = l_ace + l_vce + lambda_ac * l_ac + lambda_vc * l_vc
struct LossBreakdown {
    double l_ace = 0;
    double l_vce = 0;
    double l_ac = 0;
    double l_vc = 0;
    double total = 0;

    bool finite() const;
};

// -log softmax(logits)[label] in log-sum-exp form.
template <typename T>
T cross_entropy(std::span<const T> logits, int label);

template <typename T>
T euclidean_distance(std::span<const T> x, std::span<const T> y);

// sqrt(sum + 1e-12): keeps the distance gradient finite at x = y. Used by
// the triplet losses; the bias is below every test tolerance.
template <typename T>
T smoothed_distance(std::span<const T> x, std::span<const T> y);

// mean over the batch of max(0, delta + D(a, sa) - D(a, sv)), computed on
// disentangled features: same-action is the positive, same-view the negative.
template <typename T>
T triplet_action(std::span<const std::vector<T>> fhat_anchor,
                 std::span<const std::vector<T>> fhat_same_action,
                 std::span<const std::vector<T>> fhat_same_view, T delta);

// Roles reversed, computed on raw backbone features: same-view is the
// positive, same-action the negative.
template <typename T>
T triplet_view(std::span<const std::vector<T>> f_anchor,
               std::span<const std::vector<T>> f_same_view,
               std::span<const std::vector<T>> f_same_action, T delta);

// Composite loss over a triplet batch. Cross-entropies use the anchor only.
template <typename T>
LossBreakdown total_loss(std::span<const ForwardOutput<T>> anchors,
                         std::span<const ForwardOutput<T>> same_views,
                         std::span<const ForwardOutput<T>> same_actions,
                         std::span<const int> action_labels, std::span<const int> view_labels,
                         const LossWeights& weights);

// Per-term gains on the two cross-entropies. Ablation / testing hook; both 1
// in normal training.
struct TermGains {
    double ace = 1.0;
    double vce = 1.0;
};

// One triplet batch: forward all three members, composite loss, backward.
// Parameter gradients are accumulated into `grads` (pre-zeroed by the
// caller). Batch-parallel internally; gradients are reduced in batch order so
// results are bit-deterministic regardless of thread count.
template <typename T>
LossBreakdown compute_loss_and_grads(const ModelConfig& cfg, const ModelParams<T>& params,
                                     std::span<const Image> anchor_images,
                                     std::span<const Image> same_view_images,
                                     std::span<const Image> same_action_images,
                                     std::span<const int> action_labels,
                                     std::span<const int> view_labels, const LossWeights& weights,
                                     bool stop_gradient_pv, ModelParams<T>& grads,
                                     const TermGains& gains = {});

// Loss only, no gradients. `frozen_pv`, when non-null, supplies per-member
// gate probabilities (anchor, sv, sa per batch item) captured at a base
// parameter point; this is how the finite-difference oracle evaluates the
// stop-gradient objective.
template <typename T>
LossBreakdown compute_loss_only(const ModelConfig& cfg, const ModelParams<T>& params,
                                std::span<const Image> anchor_images,
                                std::span<const Image> same_view_images,
                                std::span<const Image> same_action_images,
                                std::span<const int> action_labels,
                                std::span<const int> view_labels, const LossWeights& weights,
                                const std::vector<std::vector<T>>* frozen_pv = nullptr,
                                const TermGains& gains = {});

}  // namespace dbmnet
