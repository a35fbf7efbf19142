#include "dbmnet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dbmnet/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dbmnet {

namespace {
constexpr double kDistanceEps = 1e-12;
}

void LossWeights::validate() const {
    if (lambda_ac < 0 || lambda_vc < 0) throw ConfigError("lambda weights must be >= 0");
    if (!(delta > 0)) throw ConfigError("triplet margin delta must be > 0");
}

bool LossBreakdown::finite() const {
    return std::isfinite(l_ace) && std::isfinite(l_vce) && std::isfinite(l_ac) &&
           std::isfinite(l_vc) && std::isfinite(total);
}

template <typename T>
T cross_entropy(std::span<const T> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size())) {
        throw LabelError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                         std::to_string(logits.size()) + ")");
    }
    const T m = *std::max_element(logits.begin(), logits.end());
    T sum = T(0);
    for (const T z : logits) sum += std::exp(z - m);
    return m + std::log(sum) - logits[label];
}

template <typename T>
T euclidean_distance(std::span<const T> x, std::span<const T> y) {
    if (x.size() != y.size()) throw ShapeError("euclidean_distance: length mismatch");
    T ssq = T(0);
    for (size_t i = 0; i < x.size(); ++i) {
        const T diff = x[i] - y[i];
        ssq += diff * diff;
    }
    return std::sqrt(ssq);
}

template <typename T>
T smoothed_distance(std::span<const T> x, std::span<const T> y) {
    if (x.size() != y.size()) throw ShapeError("smoothed_distance: length mismatch");
    T ssq = T(0);
    for (size_t i = 0; i < x.size(); ++i) {
        const T diff = x[i] - y[i];
        ssq += diff * diff;
    }
    return std::sqrt(ssq + static_cast<T>(kDistanceEps));
}

namespace {

template <typename T>
T triplet_hinge_mean(std::span<const std::vector<T>> anchor, std::span<const std::vector<T>> pos,
                     std::span<const std::vector<T>> neg, T delta) {
    if (anchor.size() != pos.size() || anchor.size() != neg.size() || anchor.empty()) {
        throw ShapeError("triplet loss: batch size mismatch or empty batch");
    }
    T acc = T(0);
    for (size_t i = 0; i < anchor.size(); ++i) {
        const T d_pos = smoothed_distance<T>(anchor[i], pos[i]);
        const T d_neg = smoothed_distance<T>(anchor[i], neg[i]);
        acc += std::max(T(0), delta + d_pos - d_neg);
    }
    return acc / static_cast<T>(anchor.size());
}

}  // namespace

template <typename T>
T triplet_action(std::span<const std::vector<T>> fhat_anchor,
                 std::span<const std::vector<T>> fhat_same_action,
                 std::span<const std::vector<T>> fhat_same_view, T delta) {
    return triplet_hinge_mean(fhat_anchor, fhat_same_action, fhat_same_view, delta);
}

template <typename T>
T triplet_view(std::span<const std::vector<T>> f_anchor, std::span<const std::vector<T>> f_same_view,
               std::span<const std::vector<T>> f_same_action, T delta) {
    return triplet_hinge_mean(f_anchor, f_same_view, f_same_action, delta);
}

template <typename T>
LossBreakdown total_loss(std::span<const ForwardOutput<T>> anchors,
                         std::span<const ForwardOutput<T>> same_views,
                         std::span<const ForwardOutput<T>> same_actions,
                         std::span<const int> action_labels, std::span<const int> view_labels,
                         const LossWeights& weights) {
    weights.validate();
    const size_t n = anchors.size();
    if (n == 0 || same_views.size() != n || same_actions.size() != n ||
        action_labels.size() != n || view_labels.size() != n) {
        throw ShapeError("total_loss: inconsistent batch");
    }

    LossBreakdown out;
    std::vector<std::vector<T>> fh_a(n), fh_sa(n), fh_sv(n), f_a(n), f_sv(n), f_sa(n);
    for (size_t i = 0; i < n; ++i) {
        out.l_ace += static_cast<double>(
            cross_entropy<T>(std::span<const T>(anchors[i].z_a), action_labels[i]));
        out.l_vce += static_cast<double>(
            cross_entropy<T>(std::span<const T>(anchors[i].z_v), view_labels[i]));
        fh_a[i] = anchors[i].f_hat;
        fh_sa[i] = same_actions[i].f_hat;
        fh_sv[i] = same_views[i].f_hat;
        f_a[i] = anchors[i].f;
        f_sv[i] = same_views[i].f;
        f_sa[i] = same_actions[i].f;
    }
    out.l_ace /= static_cast<double>(n);
    out.l_vce /= static_cast<double>(n);
    out.l_ac = static_cast<double>(triplet_action<T>(fh_a, fh_sa, fh_sv, static_cast<T>(weights.delta)));
    out.l_vc = static_cast<double>(triplet_view<T>(f_a, f_sv, f_sa, static_cast<T>(weights.delta)));
    out.total = out.l_ace + out.l_vce + weights.lambda_ac * out.l_ac + weights.lambda_vc * out.l_vc;
    return out;
}

namespace {

// Per-item forward + loss + backward. The triplet couples only the three
// members of one item, so items are independent given the mean scaling 1/n.
template <typename T>
struct ItemTerms {
    double l_ace = 0, l_vce = 0, l_ac = 0, l_vc = 0;
};

template <typename T>
void seed_distance_grad(std::span<const T> x, std::span<const T> y, T scale, std::vector<T>& d_x,
                        std::vector<T>& d_y) {
    // d/dx sqrt(ssq + eps) = (x - y) / dist
    T ssq = T(0);
    for (size_t i = 0; i < x.size(); ++i) {
        const T diff = x[i] - y[i];
        ssq += diff * diff;
    }
    const T dist = std::sqrt(ssq + static_cast<T>(kDistanceEps));
    for (size_t i = 0; i < x.size(); ++i) {
        const T g = scale * (x[i] - y[i]) / dist;
        d_x[i] += g;
        d_y[i] -= g;
    }
}

template <typename T>
ItemTerms<T> item_loss_and_grads(const ModelConfig& cfg, const ModelParams<T>& params,
                                 const Image& img_a, const Image& img_sv, const Image& img_sa,
                                 int action_label, int view_label, const LossWeights& weights,
                                 bool stop_gradient_pv, double inv_n, ModelParams<T>& grads,
                                 const TermGains& gains) {
    ForwardTrace<T> tr_a, tr_sv, tr_sa;
    forward(cfg, params, img_a, &tr_a);
    forward(cfg, params, img_sv, &tr_sv);
    forward(cfg, params, img_sa, &tr_sa);

    const int d = cfg.feature_dim;
    ItemTerms<T> terms;
    BackwardSeeds<T> seed_a, seed_sv, seed_sa;
    seed_a.d_f_hat.assign(d, T(0));
    seed_a.d_f.assign(d, T(0));
    seed_sv.d_f_hat.assign(d, T(0));
    seed_sv.d_f.assign(d, T(0));
    seed_sa.d_f_hat.assign(d, T(0));
    seed_sa.d_f.assign(d, T(0));

    // anchor cross-entropies: d z = (softmax - onehot) * gain / n
    terms.l_ace = static_cast<double>(
        cross_entropy<T>(std::span<const T>(tr_a.out.z_a), action_label));
    terms.l_vce = static_cast<double>(
        cross_entropy<T>(std::span<const T>(tr_a.out.z_v), view_label));
    if (gains.ace != 0) {
        std::vector<T> p = softmax<T>(std::span<const T>(tr_a.out.z_a));
        seed_a.d_z_a.resize(p.size());
        for (size_t k = 0; k < p.size(); ++k) {
            seed_a.d_z_a[k] = static_cast<T>((p[k] - (static_cast<int>(k) == action_label ? 1 : 0)) *
                                             gains.ace * inv_n);
        }
    }
    if (gains.vce != 0) {
        std::vector<T> p = softmax<T>(std::span<const T>(tr_a.out.z_v));
        seed_a.d_z_v.resize(p.size());
        for (size_t k = 0; k < p.size(); ++k) {
            seed_a.d_z_v[k] = static_cast<T>((p[k] - (static_cast<int>(k) == view_label ? 1 : 0)) *
                                             gains.vce * inv_n);
        }
    }

    // action triplet on disentangled features: positive sa, negative sv
    {
        const T d_pos = smoothed_distance<T>(tr_a.out.f_hat, tr_sa.out.f_hat);
        const T d_neg = smoothed_distance<T>(tr_a.out.f_hat, tr_sv.out.f_hat);
        const T hinge = static_cast<T>(weights.delta) + d_pos - d_neg;
        if (hinge > T(0)) {
            terms.l_ac = static_cast<double>(hinge);
            const T scale = static_cast<T>(weights.lambda_ac * inv_n);
            if (scale != T(0)) {
                seed_distance_grad<T>(tr_a.out.f_hat, tr_sa.out.f_hat, scale, seed_a.d_f_hat,
                                      seed_sa.d_f_hat);
                seed_distance_grad<T>(tr_a.out.f_hat, tr_sv.out.f_hat, -scale, seed_a.d_f_hat,
                                      seed_sv.d_f_hat);
            }
        }
    }
    // view triplet on backbone features: positive sv, negative sa
    {
        const T d_pos = smoothed_distance<T>(tr_a.out.f, tr_sv.out.f);
        const T d_neg = smoothed_distance<T>(tr_a.out.f, tr_sa.out.f);
        const T hinge = static_cast<T>(weights.delta) + d_pos - d_neg;
        if (hinge > T(0)) {
            terms.l_vc = static_cast<double>(hinge);
            const T scale = static_cast<T>(weights.lambda_vc * inv_n);
            if (scale != T(0)) {
                seed_distance_grad<T>(tr_a.out.f, tr_sv.out.f, scale, seed_a.d_f, seed_sv.d_f);
                seed_distance_grad<T>(tr_a.out.f, tr_sa.out.f, -scale, seed_a.d_f, seed_sa.d_f);
            }
        }
    }

    backward(cfg, params, tr_a, seed_a, stop_gradient_pv, grads);
    backward(cfg, params, tr_sv, seed_sv, stop_gradient_pv, grads);
    backward(cfg, params, tr_sa, seed_sa, stop_gradient_pv, grads);
    return terms;
}

template <typename T>
void accumulate(ModelParams<T>& into, const ModelParams<T>& from) {
    auto add = [](Tensor<T>& a, const Tensor<T>& b) {
        for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    };
    add(into.conv1_w, from.conv1_w); add(into.conv1_b, from.conv1_b);
    add(into.conv2_w, from.conv2_w); add(into.conv2_b, from.conv2_b);
    add(into.conv3_w, from.conv3_w); add(into.conv3_b, from.conv3_b);
    add(into.queries, from.queries);
    add(into.act_w, from.act_w); add(into.act_b, from.act_b);
    add(into.view_w, from.view_w); add(into.view_b, from.view_b);
}

}  // namespace

template <typename T>
LossBreakdown compute_loss_and_grads(const ModelConfig& cfg, const ModelParams<T>& params,
                                     std::span<const Image> anchor_images,
                                     std::span<const Image> same_view_images,
                                     std::span<const Image> same_action_images,
                                     std::span<const int> action_labels,
                                     std::span<const int> view_labels, const LossWeights& weights,
                                     bool stop_gradient_pv, ModelParams<T>& grads,
                                     const TermGains& gains) {
    weights.validate();
    const size_t n = anchor_images.size();
    if (n == 0 || same_view_images.size() != n || same_action_images.size() != n ||
        action_labels.size() != n || view_labels.size() != n) {
        throw ShapeError("compute_loss_and_grads: inconsistent batch");
    }
    const double inv_n = 1.0 / static_cast<double>(n);

    // Per-item gradient buffers merged in batch order: bit-deterministic for
    // any thread count.
    std::vector<ModelParams<T>> item_grads(n);
    std::vector<ItemTerms<T>> item_terms(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) {
        item_grads[i] = zeros_like(params);
        item_terms[i] = item_loss_and_grads(cfg, params, anchor_images[i], same_view_images[i],
                                            same_action_images[i], action_labels[i], view_labels[i],
                                            weights, stop_gradient_pv, inv_n, item_grads[i], gains);
    }

    LossBreakdown out;
    for (size_t i = 0; i < n; ++i) {
        accumulate(grads, item_grads[i]);
        out.l_ace += item_terms[i].l_ace;
        out.l_vce += item_terms[i].l_vce;
        out.l_ac += item_terms[i].l_ac;
        out.l_vc += item_terms[i].l_vc;
    }
    out.l_ace *= inv_n;
    out.l_vce *= inv_n;
    out.l_ac *= inv_n;
    out.l_vc *= inv_n;
    out.total = gains.ace * out.l_ace + gains.vce * out.l_vce + weights.lambda_ac * out.l_ac +
                weights.lambda_vc * out.l_vc;
    return out;
}

template <typename T>
LossBreakdown compute_loss_only(const ModelConfig& cfg, const ModelParams<T>& params,
                                std::span<const Image> anchor_images,
                                std::span<const Image> same_view_images,
                                std::span<const Image> same_action_images,
                                std::span<const int> action_labels, std::span<const int> view_labels,
                                const LossWeights& weights,
                                const std::vector<std::vector<T>>* frozen_pv,
                                const TermGains& gains) {
    weights.validate();
    const size_t n = anchor_images.size();
    if (n == 0 || same_view_images.size() != n || same_action_images.size() != n ||
        action_labels.size() != n || view_labels.size() != n) {
        throw ShapeError("compute_loss_only: inconsistent batch");
    }
    if (frozen_pv && frozen_pv->size() != 3 * n) {
        throw ShapeError("compute_loss_only: frozen_pv must hold 3 entries per item");
    }

    LossBreakdown out;
    for (size_t i = 0; i < n; ++i) {
        const std::vector<T>* pv_a = frozen_pv ? &(*frozen_pv)[3 * i] : nullptr;
        const std::vector<T>* pv_sv = frozen_pv ? &(*frozen_pv)[3 * i + 1] : nullptr;
        const std::vector<T>* pv_sa = frozen_pv ? &(*frozen_pv)[3 * i + 2] : nullptr;
        const ForwardOutput<T> out_a = forward(cfg, params, anchor_images[i], nullptr, pv_a);
        const ForwardOutput<T> out_sv = forward(cfg, params, same_view_images[i], nullptr, pv_sv);
        const ForwardOutput<T> out_sa = forward(cfg, params, same_action_images[i], nullptr, pv_sa);

        out.l_ace += static_cast<double>(
            cross_entropy<T>(std::span<const T>(out_a.z_a), action_labels[i]));
        out.l_vce += static_cast<double>(
            cross_entropy<T>(std::span<const T>(out_a.z_v), view_labels[i]));
        const T d_pos_a = smoothed_distance<T>(out_a.f_hat, out_sa.f_hat);
        const T d_neg_a = smoothed_distance<T>(out_a.f_hat, out_sv.f_hat);
        out.l_ac += std::max(0.0, static_cast<double>(weights.delta) +
                                      static_cast<double>(d_pos_a) - static_cast<double>(d_neg_a));
        const T d_pos_v = smoothed_distance<T>(out_a.f, out_sv.f);
        const T d_neg_v = smoothed_distance<T>(out_a.f, out_sa.f);
        out.l_vc += std::max(0.0, static_cast<double>(weights.delta) +
                                      static_cast<double>(d_pos_v) - static_cast<double>(d_neg_v));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.l_ace *= inv_n;
    out.l_vce *= inv_n;
    out.l_ac *= inv_n;
    out.l_vc *= inv_n;
    out.total = gains.ace * out.l_ace + gains.vce * out.l_vce + weights.lambda_ac * out.l_ac +
                weights.lambda_vc * out.l_vc;
    return out;
}

#define DBMNET_INSTANTIATE(T)                                                                  \
    template T cross_entropy<T>(std::span<const T>, int);                                     \
    template T euclidean_distance<T>(std::span<const T>, std::span<const T>);                 \
    template T smoothed_distance<T>(std::span<const T>, std::span<const T>);                  \
    template T triplet_action<T>(std::span<const std::vector<T>>, std::span<const std::vector<T>>, \
                                 std::span<const std::vector<T>>, T);                         \
    template T triplet_view<T>(std::span<const std::vector<T>>, std::span<const std::vector<T>>,   \
                               std::span<const std::vector<T>>, T);                           \
    template LossBreakdown total_loss<T>(std::span<const ForwardOutput<T>>,                   \
                                         std::span<const ForwardOutput<T>>,                   \
                                         std::span<const ForwardOutput<T>>, std::span<const int>,  \
                                         std::span<const int>, const LossWeights&);           \
    template LossBreakdown compute_loss_and_grads<T>(                                         \
        const ModelConfig&, const ModelParams<T>&, std::span<const Image>,                    \
        std::span<const Image>, std::span<const Image>, std::span<const int>,                 \
        std::span<const int>, const LossWeights&, bool, ModelParams<T>&, const TermGains&);   \
    template LossBreakdown compute_loss_only<T>(                                              \
        const ModelConfig&, const ModelParams<T>&, std::span<const Image>,                    \
        std::span<const Image>, std::span<const Image>, std::span<const int>,                 \
        std::span<const int>, const LossWeights&, const std::vector<std::vector<T>>*,         \
        const TermGains&)

DBMNET_INSTANTIATE(float);
DBMNET_INSTANTIATE(double);

#undef DBMNET_INSTANTIATE

}  // namespace dbmnet
