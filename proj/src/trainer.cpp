#include "dbmnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dbmnet/augment.hpp"
#include "dbmnet/evaluator.hpp"
#include "dbmnet/sampler.hpp"

namespace dbmnet {

namespace {

// Seed stream salts; distinct per consumer so streams never collide.
enum : uint64_t { kSaltInit = 1, kSaltSampler = 2, kSaltAugment = 3, kSaltGradSample = 4 };

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (!(lr_drop_factor > 0)) throw ConfigError("train: lr_drop_factor must be > 0");
    for (size_t i = 1; i < lr_drop_epochs.size(); ++i) {
        if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
            throw ConfigError("train: lr_drop_epochs must be strictly increasing");
        }
    }
    if (input_size < 8) throw ConfigError("train: input_size must be >= 8");
    loss.validate();
}

std::map<std::string, std::string> TrainConfig::snapshot() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::map<std::string, std::string> s;
    s["epochs"] = std::to_string(epochs);
    s["batch_size"] = std::to_string(batch_size);
    s["lr"] = fmt(lr);
    s["momentum"] = fmt(momentum);
    s["weight_decay"] = fmt(weight_decay);
    std::string drops;
    for (int e : lr_drop_epochs) drops += (drops.empty() ? "" : ",") + std::to_string(e);
    s["lr_drop_epochs"] = drops;
    s["lr_drop_factor"] = fmt(lr_drop_factor);
    s["seed"] = std::to_string(seed);
    s["lambda_ac"] = fmt(loss.lambda_ac);
    s["lambda_vc"] = fmt(loss.lambda_vc);
    s["delta"] = fmt(loss.delta);
    s["stop_gradient_pv"] = stop_gradient_pv ? "true" : "false";
    s["input_size"] = std::to_string(input_size);
    s["feature_dim"] = std::to_string(feature_dim);
    s["augment"] = augment ? "true" : "false";
    s["balanced_anchors"] = balanced_anchors ? "true" : "false";
    s["decay_queries"] = decay_queries ? "true" : "false";
    s["identity_gate"] = identity_gate ? "true" : "false";
    return s;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr;
    for (int drop : cfg.lr_drop_epochs) {
        if (epoch >= drop) lr /= cfg.lr_drop_factor;
    }
    return lr;
}

void sgd_step(const TrainConfig& cfg, double lr, ModelParams<float>& params,
              const ModelParams<float>& grads, ModelParams<float>& velocity) {
    // Weight decay applies to weight matrices only; never to biases, and to
    // the queries only when explicitly enabled.
    auto update = [&](Tensor<float>& theta, const Tensor<float>& g, Tensor<float>& v, bool decay) {
        const auto wd = static_cast<float>(decay ? cfg.weight_decay : 0.0);
        const auto flr = static_cast<float>(lr);
        const auto mom = static_cast<float>(cfg.momentum);
        for (size_t i = 0; i < theta.data.size(); ++i) {
            const float grad = g.data[i] + wd * theta.data[i];
            v.data[i] = mom * v.data[i] - flr * grad;
            theta.data[i] += v.data[i];
        }
    };
    update(params.conv1_w, grads.conv1_w, velocity.conv1_w, true);
    update(params.conv1_b, grads.conv1_b, velocity.conv1_b, false);
    update(params.conv2_w, grads.conv2_w, velocity.conv2_w, true);
    update(params.conv2_b, grads.conv2_b, velocity.conv2_b, false);
    update(params.conv3_w, grads.conv3_w, velocity.conv3_w, true);
    update(params.conv3_b, grads.conv3_b, velocity.conv3_b, false);
    if (!cfg.identity_gate) {
        update(params.queries, grads.queries, velocity.queries, cfg.decay_queries);
    }
    update(params.act_w, grads.act_w, velocity.act_w, true);
    update(params.act_b, grads.act_b, velocity.act_b, false);
    update(params.view_w, grads.view_w, velocity.view_w, true);
    update(params.view_b, grads.view_b, velocity.view_b, false);
}

namespace {

struct ValSet {
    std::vector<Image> images;
    std::vector<int> labels;
};

ValSet load_val_images(const Dataset& val, int input_size) {
    ValSet out;
    out.images.reserve(val.manifest.entries.size());
    for (const auto& e : val.manifest.entries) {
        out.images.push_back(val.store->load(e.source_id, input_size));
        out.labels.push_back(e.action_id);
    }
    return out;
}

std::pair<double, double> val_scores(const ModelConfig& mc, const ModelParams<float>& params,
                                     const ValSet& val) {
    std::vector<std::vector<float>> logits(val.images.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int64_t i = 0; i < static_cast<int64_t>(val.images.size()); ++i) {
        logits[i] = forward(mc, params, val.images[i]).z_a;
    }
    const double top1 = topk_accuracy(logits, val.labels, 1);
    const double top5 = topk_accuracy(logits, val.labels, std::min(5, mc.num_actions));
    return {top1, top5};
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& val_data) {
    cfg.validate();
    train_data.manifest.validate();
    val_data.manifest.validate();
    if (!(train_data.manifest.label_space == val_data.manifest.label_space)) {
        throw LabelSpaceError("train/val label spaces differ");
    }

    const auto& labels = train_data.manifest.label_space;
    ModelConfig mc{cfg.input_size, cfg.feature_dim, labels.num_actions(), labels.num_views()};
    mc.validate();

    TripletSampler sampler(train_data.manifest, cfg.balanced_anchors);
    Rng sampler_rng(mix_seed(cfg.seed, kSaltSampler));
    Rng augment_rng(mix_seed(cfg.seed, kSaltAugment));

    ModelParams<float> params = init_params<float>(mc, mix_seed(cfg.seed, kSaltInit), cfg.identity_gate);
    ModelParams<float> velocity = zeros_like(params);

    const ValSet val = load_val_images(val_data, cfg.input_size);
    const auto n_train = static_cast<int64_t>(train_data.manifest.entries.size());
    const int steps_per_epoch =
        static_cast<int>((n_train + cfg.batch_size - 1) / cfg.batch_size);

    TrainResult result;
    double best_top1 = -1.0;
    int64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(cfg, epoch);
        LossBreakdown epoch_mean;

        for (int step = 0; step < steps_per_epoch; ++step, ++global_step) {
            const TripletBatch batch = sampler.sample(cfg.batch_size, sampler_rng);
            std::vector<Image> a_imgs, sv_imgs, sa_imgs;
            std::vector<int> a_labels, v_labels;
            a_imgs.reserve(batch.triplets.size());
            sv_imgs.reserve(batch.triplets.size());
            sa_imgs.reserve(batch.triplets.size());
            for (const auto& t : batch.triplets) {
                const auto& ea = train_data.manifest.entries[t.anchor];
                const auto& ev = train_data.manifest.entries[t.same_view];
                const auto& es = train_data.manifest.entries[t.same_action];
                Image ia = train_data.store->load(ea.source_id, cfg.input_size);
                Image iv = train_data.store->load(ev.source_id, cfg.input_size);
                Image is = train_data.store->load(es.source_id, cfg.input_size);
                if (cfg.augment) {
                    ia = dbmnet::augment(ia, augment_rng);
                    iv = dbmnet::augment(iv, augment_rng);
                    is = dbmnet::augment(is, augment_rng);
                }
                a_imgs.push_back(std::move(ia));
                sv_imgs.push_back(std::move(iv));
                sa_imgs.push_back(std::move(is));
                a_labels.push_back(ea.action_id);
                v_labels.push_back(ea.view_id);
            }

            ModelParams<float> grads = zeros_like(params);
            const LossBreakdown lb =
                compute_loss_and_grads<float>(mc, params, a_imgs, sv_imgs, sa_imgs, a_labels,
                                              v_labels, cfg.loss, cfg.stop_gradient_pv, grads);
            if (!lb.finite()) {
                throw DivergedError("training diverged at step " + std::to_string(global_step) +
                                    " (epoch " + std::to_string(epoch) + ")");
            }
            sgd_step(cfg, lr, params, grads, velocity);

            epoch_mean.l_ace += lb.l_ace;
            epoch_mean.l_vce += lb.l_vce;
            epoch_mean.l_ac += lb.l_ac;
            epoch_mean.l_vc += lb.l_vc;
            epoch_mean.total += lb.total;
        }

        epoch_mean.l_ace /= steps_per_epoch;
        epoch_mean.l_vce /= steps_per_epoch;
        epoch_mean.l_ac /= steps_per_epoch;
        epoch_mean.l_vc /= steps_per_epoch;
        epoch_mean.total /= steps_per_epoch;

        const auto [top1, top5] = val_scores(mc, params, val);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, lr, epoch_mean, top1, top5, wall});

        if (top1 > best_top1) {  // strictly greater: earliest epoch wins ties
            best_top1 = top1;
            result.best.label_space = labels;
            result.best.model = mc;
            result.best.config_snapshot = cfg.snapshot();
            result.best.params = params;
            result.best.epoch = epoch;
            result.best.val_top1 = top1;
        }
    }
    return result;
}

void write_metrics_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    char line[512];
    for (const auto& r : log) {
        std::snprintf(line, sizeof(line),
                      "{\"epoch\":%d,\"lr\":%.17g,\"l_ace\":%.17g,\"l_vce\":%.17g,\"l_ac\":%.17g,"
                      "\"l_vc\":%.17g,\"total\":%.17g,\"val_top1\":%.17g,\"val_top5\":%.17g,"
                      "\"wall_time_s\":%.3f}\n",
                      r.epoch, r.lr, r.loss.l_ace, r.loss.l_vce, r.loss.l_ac, r.loss.l_vc,
                      r.loss.total, r.val_top1, r.val_top5, r.wall_time_s);
        out << line;
    }
    if (!out) throw IoError("short write: " + path.string());
}

GradCheckReport gradient_check(const ModelConfig& cfg, const ModelParams<double>& params,
                               std::span<const Image> anchor_images,
                               std::span<const Image> same_view_images,
                               std::span<const Image> same_action_images,
                               std::span<const int> action_labels, std::span<const int> view_labels,
                               const LossWeights& weights, bool stop_gradient_pv,
                               const GradCheckOptions& opts) {
    ModelParams<double> grads = zeros_like(params);
    compute_loss_and_grads<double>(cfg, params, anchor_images, same_view_images, same_action_images,
                                   action_labels, view_labels, weights, stop_gradient_pv, grads,
                                   opts.gains);

    if (!opts.corrupt_param.empty()) {
        grads.for_each([&](const char* name, Tensor<double>& t) {
            if (opts.corrupt_param == name) {
                for (double& g : t.data) g += opts.corrupt_delta;
            }
        });
    }

    // In stop-gradient mode the objective treats each member's gate input as
    // a constant; freeze those probabilities at the base point so the
    // numerical derivative matches the severed analytic one.
    std::vector<std::vector<double>> frozen_pv;
    const std::vector<std::vector<double>>* frozen = nullptr;
    if (stop_gradient_pv) {
        frozen_pv.reserve(anchor_images.size() * 3);
        for (size_t i = 0; i < anchor_images.size(); ++i) {
            frozen_pv.push_back(forward(cfg, params, anchor_images[i]).p_v);
            frozen_pv.push_back(forward(cfg, params, same_view_images[i]).p_v);
            frozen_pv.push_back(forward(cfg, params, same_action_images[i]).p_v);
        }
        frozen = &frozen_pv;
    }

    struct Slot {
        std::string name;
        Tensor<double>* tensor;
        Tensor<double>* grad;
    };
    std::vector<Slot> slots;
    auto& mutable_params = const_cast<ModelParams<double>&>(params);
    mutable_params.for_each([&](const char* name, Tensor<double>& t) {
        slots.push_back({name, &t, nullptr});
    });
    grads.for_each([&, i = 0](const char*, Tensor<double>& t) mutable { slots[i++].grad = &t; });

    int64_t total = 0;
    for (const auto& s : slots) total += s.tensor->numel();

    // (slot, flat index) pairs to check
    std::vector<std::pair<int, int64_t>> picks;
    if (total <= opts.max_exhaustive) {
        for (int si = 0; si < static_cast<int>(slots.size()); ++si) {
            for (int64_t i = 0; i < slots[si].tensor->numel(); ++i) picks.emplace_back(si, i);
        }
    } else {
        Rng rng(mix_seed(opts.seed, kSaltGradSample));
        const auto want = static_cast<size_t>(opts.sample_count);
        std::vector<std::pair<int, int64_t>> all;
        all.reserve(total);
        for (int si = 0; si < static_cast<int>(slots.size()); ++si) {
            for (int64_t i = 0; i < slots[si].tensor->numel(); ++i) all.emplace_back(si, i);
        }
        for (size_t i = 0; i < want && i < all.size(); ++i) {  // partial Fisher-Yates
            const size_t j = i + rng.uniform_int(all.size() - i);
            std::swap(all[i], all[j]);
            picks.push_back(all[i]);
        }
    }

    auto loss_at = [&]() {
        return compute_loss_only<double>(cfg, params, anchor_images, same_view_images,
                                         same_action_images, action_labels, view_labels, weights,
                                         frozen, opts.gains)
            .total;
    };

    GradCheckReport report;
    report.checked = static_cast<int64_t>(picks.size());
    for (const auto& [si, idx] : picks) {
        double& theta = slots[si].tensor->data[idx];
        const double saved = theta;
        theta = saved + opts.epsilon;
        const double up = loss_at();
        theta = saved - opts.epsilon;
        const double down = loss_at();
        theta = saved;

        const double numeric = (up - down) / (2.0 * opts.epsilon);
        const double analytic = slots[si].grad->data[idx];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_parameter = slots[si].name + "[" + std::to_string(idx) + "]";
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

}  // namespace dbmnet
