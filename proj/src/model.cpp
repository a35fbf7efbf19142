#include "dbmnet/model.hpp"

#include <algorithm>
#include <cmath>

#include "dbmnet/errors.hpp"

namespace dbmnet {

void ModelConfig::validate() const {
    if (input_size < 8) throw ConfigError("model: input_size must be >= 8");
    if (feature_dim < 4 || feature_dim % 4 != 0) {
        throw ConfigError("model: feature_dim must be a positive multiple of 4");
    }
    if (num_actions < 2) throw ConfigError("model: num_actions must be >= 2");
    if (num_views < 2) throw ConfigError("model: num_views must be >= 2");
}

namespace {

// 3x3 conv, stride 2, pad 1: output side = ceil(in / 2).
inline int conv_out_side(int in) { return (in + 1) / 2; }

template <typename T>
void conv3x3_s2_forward(const T* in, int c_in, int side_in, const T* w, const T* b, T* out,
                        int c_out, int side_out, bool relu) {
    const int in_plane = side_in * side_in;
    const int out_plane = side_out * side_out;
    for (int oc = 0; oc < c_out; ++oc) {
        const T* wc = w + static_cast<size_t>(oc) * c_in * 9;
        T* dst = out + static_cast<size_t>(oc) * out_plane;
        for (int oy = 0; oy < side_out; ++oy) {
            const int iy0 = 2 * oy - 1;
            for (int ox = 0; ox < side_out; ++ox) {
                const int ix0 = 2 * ox - 1;
                T acc = b[oc];
                for (int ic = 0; ic < c_in; ++ic) {
                    const T* src = in + static_cast<size_t>(ic) * in_plane;
                    const T* wk = wc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= side_in) continue;
                        const T* src_row = src + static_cast<size_t>(iy) * side_in;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= side_in) continue;
                            acc += wk[ky * 3 + kx] * src_row[ix];
                        }
                    }
                }
                dst[oy * side_out + ox] = relu ? std::max(acc, T(0)) : acc;
            }
        }
    }
}

// Backward through conv + ReLU. d_out already carries the ReLU mask applied
// by the caller. d_in may be null for the first layer (input grads unused).
template <typename T>
void conv3x3_s2_backward(const T* in, int c_in, int side_in, const T* w, const T* d_out, int c_out,
                         int side_out, T* d_w, T* d_b, T* d_in) {
    const int in_plane = side_in * side_in;
    const int out_plane = side_out * side_out;
    for (int oc = 0; oc < c_out; ++oc) {
        const T* g = d_out + static_cast<size_t>(oc) * out_plane;
        const T* wc = w + static_cast<size_t>(oc) * c_in * 9;
        T* dwc = d_w + static_cast<size_t>(oc) * c_in * 9;
        for (int oy = 0; oy < side_out; ++oy) {
            const int iy0 = 2 * oy - 1;
            for (int ox = 0; ox < side_out; ++ox) {
                const T go = g[oy * side_out + ox];
                if (go == T(0)) continue;
                const int ix0 = 2 * ox - 1;
                d_b[oc] += go;
                for (int ic = 0; ic < c_in; ++ic) {
                    const T* src = in + static_cast<size_t>(ic) * in_plane;
                    T* din = d_in ? d_in + static_cast<size_t>(ic) * in_plane : nullptr;
                    const T* wk = wc + ic * 9;
                    T* dwk = dwc + ic * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= side_in) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= side_in) continue;
                            dwk[ky * 3 + kx] += go * src[iy * side_in + ix];
                            if (din) din[iy * side_in + ix] += go * wk[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
std::vector<T> affine(const Tensor<T>& w, const Tensor<T>& b, std::span<const T> x) {
    const auto rows = static_cast<size_t>(w.shape[0]);
    const auto cols = static_cast<size_t>(w.shape[1]);
    if (x.size() != cols) throw ShapeError("affine: input length mismatch");
    std::vector<T> out(rows);
    for (size_t r = 0; r < rows; ++r) {
        T acc = b.data[r];
        const T* wr = w.data.data() + r * cols;
        for (size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
        out[r] = acc;
    }
    return out;
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed, bool identity_gate) {
    cfg.validate();
    const int c1 = cfg.conv1_channels();
    const int c2 = cfg.conv2_channels();
    const int d = cfg.feature_dim;

    ModelParams<T> p;
    p.conv1_w = Tensor<T>::zeros({c1, 3, 3, 3});
    p.conv1_b = Tensor<T>::zeros({c1});
    p.conv2_w = Tensor<T>::zeros({c2, c1, 3, 3});
    p.conv2_b = Tensor<T>::zeros({c2});
    p.conv3_w = Tensor<T>::zeros({d, c2, 3, 3});
    p.conv3_b = Tensor<T>::zeros({d});
    p.queries = Tensor<T>::zeros({d, cfg.num_views});
    p.act_w = Tensor<T>::zeros({cfg.num_actions, d});
    p.act_b = Tensor<T>::zeros({cfg.num_actions});
    p.view_w = Tensor<T>::zeros({cfg.num_views, d});
    p.view_b = Tensor<T>::zeros({cfg.num_views});

    Rng rng(seed);
    auto fill_uniform = [&rng](Tensor<T>& t, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill_uniform(p.conv1_w, 3 * 9);
    fill_uniform(p.conv2_w, c1 * 9);
    fill_uniform(p.conv3_w, c2 * 9);
    fill_uniform(p.act_w, d);
    fill_uniform(p.view_w, d);
    if (identity_gate) {
        std::fill(p.queries.data.begin(), p.queries.data.end(), T(1));
    } else {
        for (T& v : p.queries.data) v = static_cast<T>(rng.normal());
    }
    return p;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
    ModelParams<T> out;
    out.conv1_w = Tensor<T>::zeros(params.conv1_w.shape);
    out.conv1_b = Tensor<T>::zeros(params.conv1_b.shape);
    out.conv2_w = Tensor<T>::zeros(params.conv2_w.shape);
    out.conv2_b = Tensor<T>::zeros(params.conv2_b.shape);
    out.conv3_w = Tensor<T>::zeros(params.conv3_w.shape);
    out.conv3_b = Tensor<T>::zeros(params.conv3_b.shape);
    out.queries = Tensor<T>::zeros(params.queries.shape);
    out.act_w = Tensor<T>::zeros(params.act_w.shape);
    out.act_b = Tensor<T>::zeros(params.act_b.shape);
    out.view_w = Tensor<T>::zeros(params.view_w.shape);
    out.view_b = Tensor<T>::zeros(params.view_b.shape);
    return out;
}

template <typename T>
std::vector<T> backbone_forward(const ModelConfig& cfg, const ModelParams<T>& params,
                                const Image& image, ForwardTrace<T>* trace) {
    check_image(image, cfg.input_size);
    const int c1 = cfg.conv1_channels();
    const int c2 = cfg.conv2_channels();
    const int d = cfg.feature_dim;
    const int s0 = cfg.input_size;
    const int s1 = conv_out_side(s0);
    const int s2 = conv_out_side(s1);
    const int s3 = conv_out_side(s2);

    std::vector<T> input(image.data.begin(), image.data.end());
    std::vector<T> a1(static_cast<size_t>(c1) * s1 * s1);
    std::vector<T> a2(static_cast<size_t>(c2) * s2 * s2);
    std::vector<T> a3(static_cast<size_t>(d) * s3 * s3);

    conv3x3_s2_forward(input.data(), 3, s0, params.conv1_w.data.data(), params.conv1_b.data.data(),
                       a1.data(), c1, s1, true);
    conv3x3_s2_forward(a1.data(), c1, s1, params.conv2_w.data.data(), params.conv2_b.data.data(),
                       a2.data(), c2, s2, true);
    conv3x3_s2_forward(a2.data(), c2, s2, params.conv3_w.data.data(), params.conv3_b.data.data(),
                       a3.data(), d, s3, true);

    std::vector<T> f(d);
    const int plane = s3 * s3;
    for (int k = 0; k < d; ++k) {
        T acc = T(0);
        const T* src = a3.data() + static_cast<size_t>(k) * plane;
        for (int i = 0; i < plane; ++i) acc += src[i];
        f[k] = acc / static_cast<T>(plane);
    }

    if (trace) {
        trace->input = std::move(input);
        trace->a1 = std::move(a1);
        trace->a2 = std::move(a2);
        trace->a3 = std::move(a3);
        trace->s1 = s1;
        trace->s2 = s2;
        trace->s3 = s3;
    }
    return f;
}

template <typename T>
std::vector<T> view_logits(const ModelParams<T>& params, std::span<const T> f) {
    return affine(params.view_w, params.view_b, f);
}

template <typename T>
std::vector<T> softmax(std::span<const T> z) {
    std::vector<T> p(z.size());
    const T m = *std::max_element(z.begin(), z.end());
    T sum = T(0);
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (T& v : p) v /= sum;
    return p;
}

template <typename T>
std::vector<T> disentangle(std::span<const T> f, std::span<const T> p_v, const Tensor<T>& queries,
                           std::vector<T>* gate_out) {
    const auto d = static_cast<size_t>(queries.shape[0]);
    const auto v = static_cast<size_t>(queries.shape[1]);
    if (f.size() != d || p_v.size() != v) throw ShapeError("disentangle: shape mismatch");
    std::vector<T> f_hat(d);
    std::vector<T> gate(d);
    for (size_t k = 0; k < d; ++k) {
        // w = sum_v Q[k,v] p_v[v]; with p_v on the simplex this equals
        // 1 + sum_v (Q[k,v] - 1) p_v[v], the form used here so the all-ones
        // identity gate reproduces f bit-exactly.
        T w = T(0);
        const T* qrow = queries.data.data() + k * v;
        for (size_t j = 0; j < v; ++j) w += (qrow[j] - T(1)) * p_v[j];
        w += T(1);
        gate[k] = w;
        f_hat[k] = w * f[k];
    }
    if (gate_out) *gate_out = std::move(gate);
    return f_hat;
}

template <typename T>
std::vector<T> action_logits(const ModelParams<T>& params, std::span<const T> f_hat) {
    return affine(params.act_w, params.act_b, f_hat);
}

template <typename T>
ForwardOutput<T> forward(const ModelConfig& cfg, const ModelParams<T>& params, const Image& image,
                         ForwardTrace<T>* trace, const std::vector<T>* override_pv) {
    ForwardOutput<T> out;
    out.f = backbone_forward(cfg, params, image, trace);
    out.z_v = view_logits(params, std::span<const T>(out.f));
    out.p_v = softmax(std::span<const T>(out.z_v));
    const std::vector<T>& gate_pv = override_pv ? *override_pv : out.p_v;
    std::vector<T> gate;
    out.f_hat = disentangle(std::span<const T>(out.f), std::span<const T>(gate_pv), params.queries,
                            &gate);
    out.z_a = action_logits(params, std::span<const T>(out.f_hat));
    if (trace) {
        trace->gate_w = std::move(gate);
        trace->out = out;
    }
    return out;
}

template <typename T>
void backward(const ModelConfig& cfg, const ModelParams<T>& params, const ForwardTrace<T>& trace,
              const BackwardSeeds<T>& seeds, bool stop_gradient_pv, ModelParams<T>& grads) {
    const int d = cfg.feature_dim;
    const int A = cfg.num_actions;
    const int V = cfg.num_views;
    const auto& out = trace.out;

    // action head
    std::vector<T> d_f_hat(d, T(0));
    if (!seeds.d_f_hat.empty()) d_f_hat.assign(seeds.d_f_hat.begin(), seeds.d_f_hat.end());
    if (!seeds.d_z_a.empty()) {
        for (int r = 0; r < A; ++r) {
            const T g = seeds.d_z_a[r];
            if (g == T(0)) continue;
            grads.act_b.data[r] += g;
            T* dw = grads.act_w.data.data() + static_cast<size_t>(r) * d;
            const T* w = params.act_w.data.data() + static_cast<size_t>(r) * d;
            for (int k = 0; k < d; ++k) {
                dw[k] += g * out.f_hat[k];
                d_f_hat[k] += g * w[k];
            }
        }
    }

    // gate: f_hat = w o f, w = 1 + (Q - 1) p_v. The -1 shift in d_pv is
    // uniform across views and vanishes in the softmax backward projection,
    // so gradients match the plain w = Q p_v form.
    std::vector<T> d_f(d, T(0));
    if (!seeds.d_f.empty()) d_f.assign(seeds.d_f.begin(), seeds.d_f.end());
    std::vector<T> d_pv(V, T(0));
    for (int k = 0; k < d; ++k) {
        const T dfh = d_f_hat[k];
        d_f[k] += dfh * trace.gate_w[k];
        const T dw = dfh * out.f[k];
        T* dq = grads.queries.data.data() + static_cast<size_t>(k) * V;
        const T* q = params.queries.data.data() + static_cast<size_t>(k) * V;
        for (int j = 0; j < V; ++j) {
            dq[j] += dw * out.p_v[j];
            d_pv[j] += dw * (q[j] - T(1));
        }
    }

    // view head; the gate contribution routes through softmax unless severed
    std::vector<T> d_z_v(V, T(0));
    if (!seeds.d_z_v.empty()) d_z_v.assign(seeds.d_z_v.begin(), seeds.d_z_v.end());
    if (!stop_gradient_pv) {
        T dot = T(0);
        for (int j = 0; j < V; ++j) dot += d_pv[j] * out.p_v[j];
        for (int j = 0; j < V; ++j) d_z_v[j] += out.p_v[j] * (d_pv[j] - dot);
    }
    for (int r = 0; r < V; ++r) {
        const T g = d_z_v[r];
        if (g == T(0)) continue;
        grads.view_b.data[r] += g;
        T* dw = grads.view_w.data.data() + static_cast<size_t>(r) * d;
        const T* w = params.view_w.data.data() + static_cast<size_t>(r) * d;
        for (int k = 0; k < d; ++k) {
            dw[k] += g * out.f[k];
            d_f[k] += g * w[k];
        }
    }

    // global average pool -> a3 (ReLU mask folded in: a3 > 0)
    const int plane3 = trace.s3 * trace.s3;
    std::vector<T> d_a3(static_cast<size_t>(d) * plane3, T(0));
    for (int k = 0; k < d; ++k) {
        const T g = d_f[k] / static_cast<T>(plane3);
        const T* act = trace.a3.data() + static_cast<size_t>(k) * plane3;
        T* dst = d_a3.data() + static_cast<size_t>(k) * plane3;
        for (int i = 0; i < plane3; ++i) dst[i] = act[i] > T(0) ? g : T(0);
    }

    const int c1 = cfg.conv1_channels();
    const int c2 = cfg.conv2_channels();
    std::vector<T> d_a2(trace.a2.size(), T(0));
    conv3x3_s2_backward(trace.a2.data(), c2, trace.s2, params.conv3_w.data.data(), d_a3.data(), d,
                        trace.s3, grads.conv3_w.data.data(), grads.conv3_b.data.data(), d_a2.data());
    for (size_t i = 0; i < d_a2.size(); ++i) {
        if (trace.a2[i] <= T(0)) d_a2[i] = T(0);
    }
    std::vector<T> d_a1(trace.a1.size(), T(0));
    conv3x3_s2_backward(trace.a1.data(), c1, trace.s1, params.conv2_w.data.data(), d_a2.data(), c2,
                        trace.s2, grads.conv2_w.data.data(), grads.conv2_b.data.data(), d_a1.data());
    for (size_t i = 0; i < d_a1.size(); ++i) {
        if (trace.a1[i] <= T(0)) d_a1[i] = T(0);
    }
    // input gradients are never consumed; skip computing them
    conv3x3_s2_backward(trace.input.data(), 3, cfg.input_size, params.conv1_w.data.data(),
                        d_a1.data(), c1, trace.s1, grads.conv1_w.data.data(),
                        grads.conv1_b.data.data(), static_cast<T*>(nullptr));
}

#define DBMNET_INSTANTIATE(T)                                                                     \
    template ModelParams<T> init_params<T>(const ModelConfig&, uint64_t, bool);                   \
    template ModelParams<T> zeros_like<T>(const ModelParams<T>&);                                 \
    template std::vector<T> backbone_forward<T>(const ModelConfig&, const ModelParams<T>&,        \
                                                const Image&, ForwardTrace<T>*);                  \
    template std::vector<T> view_logits<T>(const ModelParams<T>&, std::span<const T>);            \
    template std::vector<T> softmax<T>(std::span<const T>);                                       \
    template std::vector<T> disentangle<T>(std::span<const T>, std::span<const T>,                \
                                           const Tensor<T>&, std::vector<T>*);                    \
    template std::vector<T> action_logits<T>(const ModelParams<T>&, std::span<const T>);          \
    template ForwardOutput<T> forward<T>(const ModelConfig&, const ModelParams<T>&, const Image&, \
                                         ForwardTrace<T>*, const std::vector<T>*);                \
    template void backward<T>(const ModelConfig&, const ModelParams<T>&, const ForwardTrace<T>&,  \
                              const BackwardSeeds<T>&, bool, ModelParams<T>&)

DBMNET_INSTANTIATE(float);
DBMNET_INSTANTIATE(double);

#undef DBMNET_INSTANTIATE

}  // namespace dbmnet
