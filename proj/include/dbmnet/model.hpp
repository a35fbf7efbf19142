#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dbmnet/image.hpp"
#include "dbmnet/rng.hpp"

namespace dbmnet {

template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    static Tensor zeros(std::vector<int64_t> shape) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return Tensor{std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0))};
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

struct ModelConfig {
    int input_size = 32;
    int feature_dim = 64;  // D; conv widths are D/4, D/2, D
    int num_actions = 0;   // A
    int num_views = 0;     // V

    int conv1_channels() const { return feature_dim / 4; }
    int conv2_channels() const { return feature_dim / 2; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Everything the optimizer touches: three conv layers, the view queries Q
// (D x V), and the two linear heads.
template <typename T>
struct ModelParams {
    Tensor<T> conv1_w, conv1_b;  // [C1,3,3,3], [C1]
    Tensor<T> conv2_w, conv2_b;  // [C2,C1,3,3], [C2]
    Tensor<T> conv3_w, conv3_b;  // [D,C2,3,3], [D]
    Tensor<T> queries;           // [D,V]
    Tensor<T> act_w, act_b;      // [A,D], [A]
    Tensor<T> view_w, view_b;    // [V,D], [V]

    template <typename F>
    void for_each(F&& f) {
        f("conv1_w", conv1_w); f("conv1_b", conv1_b);
        f("conv2_w", conv2_w); f("conv2_b", conv2_b);
        f("conv3_w", conv3_w); f("conv3_b", conv3_b);
        f("queries", queries);
        f("act_w", act_w); f("act_b", act_b);
        f("view_w", view_w); f("view_b", view_b);
    }
    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each(
            [&](const char* name, const Tensor<T>& t) { f(name, t); });
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for_each([&](const char*, const Tensor<T>& t) { n += t.numel(); });
        return n;
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.conv1_w = conv1_w.template cast<U>(); out.conv1_b = conv1_b.template cast<U>();
        out.conv2_w = conv2_w.template cast<U>(); out.conv2_b = conv2_b.template cast<U>();
        out.conv3_w = conv3_w.template cast<U>(); out.conv3_b = conv3_b.template cast<U>();
        out.queries = queries.template cast<U>();
        out.act_w = act_w.template cast<U>(); out.act_b = act_b.template cast<U>();
        out.view_w = view_w.template cast<U>(); out.view_b = view_b.template cast<U>();
        return out;
    }
};

// Conv and head weights: zero-mean uniform with 1/sqrt(fan_in) bounds, biases
// zero. View queries: standard normal. identity_gate forces Q to all-ones
// (the gate then passes features through unchanged).
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed, bool identity_gate = false);

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params);

template <typename T>
struct ForwardOutput {
    std::vector<T> f;      // D backbone features
    std::vector<T> z_v;    // V view logits
    std::vector<T> p_v;    // V view probabilities
    std::vector<T> f_hat;  // D disentangled features
    std::vector<T> z_a;    // A action logits
};

// Activations retained for the backward pass.
template <typename T>
struct ForwardTrace {
    std::vector<T> input;            // 3 x S x S
    std::vector<T> a1, a2, a3;       // post-ReLU conv activations
    int s1 = 0, s2 = 0, s3 = 0;      // spatial sides after each conv
    std::vector<T> gate_w;           // D, the gate weights Q p_v
    ForwardOutput<T> out;
};

// --- individual ops (composed by forward) ---

template <typename T>
std::vector<T> backbone_forward(const ModelConfig& cfg, const ModelParams<T>& params,
                                const Image& image, ForwardTrace<T>* trace = nullptr);

template <typename T>
std::vector<T> view_logits(const ModelParams<T>& params, std::span<const T> f);

// Numerically stable softmax.
template <typename T>
std::vector<T> softmax(std::span<const T> z);

// f_hat = (Q p_v) o f : per-dimension gating by a p_v-weighted combination of
// the view queries.
template <typename T>
std::vector<T> disentangle(std::span<const T> f, std::span<const T> p_v,
                           const Tensor<T>& queries, std::vector<T>* gate_out = nullptr);

template <typename T>
std::vector<T> action_logits(const ModelParams<T>& params, std::span<const T> f_hat);

// Full pipeline. override_pv, when given, substitutes the gate's p_v input
// (the emitted z_v/p_v are still computed from the live view head); it is the
// frozen-probability hook used by the finite-difference oracle in
// stop-gradient mode.
template <typename T>
ForwardOutput<T> forward(const ModelConfig& cfg, const ModelParams<T>& params, const Image& image,
                         ForwardTrace<T>* trace = nullptr,
                         const std::vector<T>* override_pv = nullptr);

// Gradient seeds flowing into the backward pass; empty vectors mean zero.
template <typename T>
struct BackwardSeeds {
    std::vector<T> d_z_a;    // A
    std::vector<T> d_z_v;    // V (e.g. view cross-entropy)
    std::vector<T> d_f_hat;  // D (e.g. action triplet loss)
    std::vector<T> d_f;      // D (e.g. view triplet loss)
};

// Accumulates parameter gradients into `grads`. When stop_gradient_pv is set,
// the gate path d_f_hat -> p_v -> z_v is severed: the action branch then
// reaches the view head and backbone only through f directly.
template <typename T>
void backward(const ModelConfig& cfg, const ModelParams<T>& params, const ForwardTrace<T>& trace,
              const BackwardSeeds<T>& seeds, bool stop_gradient_pv, ModelParams<T>& grads);

}  // namespace dbmnet
