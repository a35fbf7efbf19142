#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"
#include "dbmnet/sampler.hpp"
#include "dbmnet/trainer.hpp"

using namespace dbmnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dbmnet_trainer_" + name);
    fs::remove(p);
    return p;
}

struct TripletFixture {
    ModelConfig cfg;
    std::vector<Image> a, sv, sa;
    std::vector<int> action_labels, view_labels;
};

// Real triplets from the tiny synthetic preset.
TripletFixture tiny_fixture(int batch, uint64_t seed) {
    TripletFixture fx;
    const Dataset data = synth_generate({4, 3, 3, 8, 0.05, 7});
    fx.cfg = ModelConfig{8, 8, 4, 3};
    TripletSampler sampler(data.manifest);
    Rng rng(seed);
    const TripletBatch tb = sampler.sample(batch, rng);
    for (const auto& t : tb.triplets) {
        const auto& e = data.manifest.entries[t.anchor];
        fx.a.push_back(data.store->load(e.source_id, 8));
        fx.sv.push_back(data.store->load(data.manifest.entries[t.same_view].source_id, 8));
        fx.sa.push_back(data.store->load(data.manifest.entries[t.same_action].source_id, 8));
        fx.action_labels.push_back(e.action_id);
        fx.view_labels.push_back(e.view_id);
    }
    return fx;
}

bool files_identical(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return !da.empty() && da == db;
}

}  // namespace

TEST_CASE("sgd: one step with momentum 0 and no decay is theta - lr*g") {
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    const ModelConfig mc{8, 8, 4, 3};
    ModelParams<float> params = init_params<float>(mc, 5);
    ModelParams<float> grads = zeros_like(params);
    ModelParams<float> velocity = zeros_like(params);
    Rng rng(9);
    grads.for_each([&](const char*, Tensor<float>& t) {
        for (float& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
    });
    const ModelParams<float> before = params;
    sgd_step(cfg, 0.1, params, grads, velocity);

    int idx = 0;
    std::vector<const Tensor<float>*> b, g, after;
    before.for_each([&](const char*, const Tensor<float>& t) { b.push_back(&t); });
    grads.for_each([&](const char*, const Tensor<float>& t) { g.push_back(&t); });
    params.for_each([&](const char*, const Tensor<float>& t) { after.push_back(&t); });
    for (size_t s = 0; s < b.size(); ++s) {
        for (size_t i = 0; i < b[s]->data.size(); ++i) {
            const float expected = b[s]->data[i] + (-(0.1f) * g[s]->data[i]);
            CHECK(after[s]->data[i] == expected);
            ++idx;
        }
    }
    CHECK(idx > 0);
}

TEST_CASE("sgd: momentum accumulates the velocity") {
    TrainConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    const ModelConfig mc{8, 8, 4, 3};
    ModelParams<float> params = init_params<float>(mc, 6);
    const float theta0 = params.act_w.data[0];
    ModelParams<float> grads = zeros_like(params);
    ModelParams<float> velocity = zeros_like(params);
    grads.act_w.data[0] = 1.0f;
    sgd_step(cfg, 0.1, params, grads, velocity);
    sgd_step(cfg, 0.1, params, grads, velocity);
    // v1 = -0.1, v2 = 0.9*v1 - 0.1 = -0.19; theta = theta0 - 0.1 - 0.19
    const float v1 = -(0.1f) * 1.0f;
    const float v2 = 0.9f * v1 - 0.1f * 1.0f;
    CHECK(params.act_w.data[0] == theta0 + v1 + v2);
}

TEST_CASE("sgd: weight decay touches weights but not biases or frozen queries") {
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.5;
    cfg.identity_gate = true;
    const ModelConfig mc{8, 8, 4, 3};
    ModelParams<float> params = init_params<float>(mc, 8, true);
    params.act_b.data[0] = 2.0f;
    const float w0 = params.act_w.data[0];
    ModelParams<float> grads = zeros_like(params);
    ModelParams<float> velocity = zeros_like(params);
    sgd_step(cfg, 0.1, params, grads, velocity);
    CHECK(params.act_w.data[0] == w0 + (-(0.1f) * (0.5f * w0)));
    CHECK(params.act_b.data[0] == 2.0f);                  // biases are never decayed
    for (float q : params.queries.data) CHECK(q == 1.0f);  // identity gate frozen
}

TEST_CASE("lr schedule: factor-10 drops at epochs 10 and 30") {
    TrainConfig cfg;  // defaults - lr 0.01, drops {10, 30}
    CHECK(lr_at_epoch(cfg, 0) == 0.01);
    CHECK(lr_at_epoch(cfg, 9) == 0.01);
    CHECK(lr_at_epoch(cfg, 10) == 0.01 / 10.0);
    CHECK(lr_at_epoch(cfg, 29) == 0.01 / 10.0);
    CHECK(lr_at_epoch(cfg, 30) == 0.01 / 10.0 / 10.0);
    CHECK(lr_at_epoch(cfg, 49) == 0.01 / 10.0 / 10.0);
}

TEST_CASE("lr schedule: non-increasing over epochs") {
    TrainConfig cfg;
    cfg.lr_drop_epochs = {3, 7, 11};
    double prev = lr_at_epoch(cfg, 0);
    for (int e = 1; e < 20; ++e) {
        const double lr = lr_at_epoch(cfg, e);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("gradient_check: tiny model passes under both gate-gradient modes") {
    const TripletFixture fx = tiny_fixture(2, 21);
    const auto params = init_params<double>(fx.cfg, 31);
    const LossWeights weights;
    for (const bool stop : {false, true}) {
        const auto report = gradient_check(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                           fx.view_labels, weights, stop);
        INFO("stop=", stop, " worst=", report.worst_parameter, " err=", report.max_rel_err);
        CHECK(report.max_rel_err < 1e-4);
        CHECK(report.checked == params.total_scalars());
    }
}

TEST_CASE("gradient_check: corrupted action-head gradient is caught and named") {
    const TripletFixture fx = tiny_fixture(2, 22);
    const auto params = init_params<double>(fx.cfg, 32);
    GradCheckOptions opts;
    opts.corrupt_param = "act_w";
    opts.corrupt_delta = 0.5;
    const auto report = gradient_check(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                       fx.view_labels, LossWeights{}, false, opts);
    CHECK(report.max_rel_err > 1e-2);
    CHECK(report.worst_parameter.substr(0, 5) == "act_w");
}

TEST_CASE("gradient_check: inactive hinges with cross-entropies off are stationary") {
    // anchor == positive makes d_pos ~ 0; a distinct negative plus a small
    // margin keeps both hinge terms strictly inactive, so the remaining loss
    // is identically zero around the base point.
    TripletFixture fx = tiny_fixture(2, 23);
    fx.sa = fx.a;  // action-triplet positive = anchor
    const auto params = init_params<double>(fx.cfg, 33);
    LossWeights weights;
    weights.delta = 1e-3;
    weights.lambda_vc = 0.0;
    GradCheckOptions opts;
    opts.gains = TermGains{0.0, 0.0};

    // the construction only works if the negatives really are farther away
    ModelParams<double> grads = zeros_like(params);
    const LossBreakdown lb =
        compute_loss_and_grads<double>(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                       fx.view_labels, weights, false, grads, opts.gains);
    REQUIRE(lb.l_ac == 0.0);
    grads.for_each([](const char*, const Tensor<double>& t) {
        for (double g : t.data) CHECK(std::abs(g) < 1e-8);
    });

    const auto report = gradient_check(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                       fx.view_labels, weights, false, opts);
    CHECK(std::abs(report.worst_analytic) < 1e-8);
    CHECK(std::abs(report.worst_numeric) < 1e-8);
}

TEST_CASE("gradient_check: subsampling kicks in above the exhaustive limit") {
    const TripletFixture fx = tiny_fixture(1, 24);
    const auto params = init_params<double>(fx.cfg, 34);
    GradCheckOptions opts;
    opts.max_exhaustive = 100;
    opts.sample_count = 120;
    const auto report = gradient_check(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                       fx.view_labels, LossWeights{}, false, opts);
    CHECK(report.checked == 120);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("stop_gradient_pv: the action branch reaches the view head only via the gate") {
    const TripletFixture fx = tiny_fixture(2, 25);
    const auto params = init_params<double>(fx.cfg, 35);
    LossWeights weights;
    weights.lambda_ac = 0.0;
    weights.lambda_vc = 0.0;
    const TermGains ace_only{1.0, 0.0};

    ModelParams<double> g_live = zeros_like(params);
    compute_loss_and_grads<double>(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                   fx.view_labels, weights, false, g_live, ace_only);
    ModelParams<double> g_stop = zeros_like(params);
    compute_loss_and_grads<double>(fx.cfg, params, fx.a, fx.sv, fx.sa, fx.action_labels,
                                   fx.view_labels, weights, true, g_stop, ace_only);

    double live_norm = 0, stop_norm = 0;
    for (double v : g_live.view_w.data) live_norm += v * v;
    for (double v : g_stop.view_w.data) stop_norm += v * v;
    for (double v : g_live.view_b.data) live_norm += v * v;
    for (double v : g_stop.view_b.data) stop_norm += v * v;
    CHECK(live_norm > 1e-12);   // gate path is live
    CHECK(stop_norm == 0.0);    // severed exactly

    // the action head gradient is identical in both modes
    for (size_t i = 0; i < g_live.act_w.data.size(); ++i) {
        CHECK(g_live.act_w.data[i] == doctest::Approx(g_stop.act_w.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint: save/load round-trips bit-exactly") {
    const ModelConfig mc{8, 8, 4, 3};
    Checkpoint ckpt;
    ckpt.label_space.actions = {"a00", "a01", "a02", "a03"};
    ckpt.label_space.views = {"v00", "v01", "v02"};
    ckpt.model = mc;
    ckpt.config_snapshot = {{"lr", "0.01"}, {"epochs", "30"}};
    ckpt.params = init_params<float>(mc, 77);
    ckpt.epoch = 12;
    ckpt.val_top1 = 83.25;

    const fs::path path = temp_file("roundtrip.bin");
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.epoch == 12);
    CHECK(loaded.val_top1 == 83.25);
    CHECK(loaded.label_space.actions == ckpt.label_space.actions);
    CHECK(loaded.label_space.views == ckpt.label_space.views);
    CHECK(loaded.config_snapshot == ckpt.config_snapshot);
    CHECK(loaded.model == mc);

    std::vector<const Tensor<float>*> orig, back;
    ckpt.params.for_each([&](const char*, const Tensor<float>& t) { orig.push_back(&t); });
    loaded.params.for_each([&](const char*, const Tensor<float>& t) { back.push_back(&t); });
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i]->shape == back[i]->shape);
        CHECK(orig[i]->data == back[i]->data);
    }

    // saving the loaded checkpoint reproduces the file byte-for-byte
    const fs::path path2 = temp_file("roundtrip2.bin");
    save_checkpoint(loaded, path2);
    CHECK(files_identical(path, path2));
}

TEST_CASE("checkpoint: truncated file raises ChecksumError") {
    const ModelConfig mc{8, 8, 4, 3};
    Checkpoint ckpt;
    ckpt.label_space.actions = {"a", "b", "c", "d"};
    ckpt.label_space.views = {"x", "y", "z"};
    ckpt.model = mc;
    ckpt.params = init_params<float>(mc, 78);
    const fs::path path = temp_file("truncated.bin");
    save_checkpoint(ckpt, path);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 16);
    CHECK_THROWS_AS(load_checkpoint(path), ChecksumError);
}

TEST_CASE("checkpoint: flipped payload byte raises ChecksumError") {
    const ModelConfig mc{8, 8, 4, 3};
    Checkpoint ckpt;
    ckpt.label_space.actions = {"a", "b", "c", "d"};
    ckpt.label_space.views = {"x", "y", "z"};
    ckpt.model = mc;
    ckpt.params = init_params<float>(mc, 79);
    const fs::path path = temp_file("corrupt.bin");
    save_checkpoint(ckpt, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(64);
    char b;
    f.seekg(64);
    f.read(&b, 1);
    b = static_cast<char>(b ^ 0xff);
    f.seekp(64);
    f.write(&b, 1);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), ChecksumError);
}

TEST_CASE("checkpoint: bumped format version raises VersionError") {
    const ModelConfig mc{8, 8, 4, 3};
    Checkpoint ckpt;
    ckpt.label_space.actions = {"a", "b", "c", "d"};
    ckpt.label_space.views = {"x", "y", "z"};
    ckpt.model = mc;
    ckpt.params = init_params<float>(mc, 80);
    const fs::path path = temp_file("version.bin");
    save_checkpoint(ckpt, path);

    // patch the version field and restore a valid trailing checksum
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const uint32_t bumped = kCheckpointFormatVersion + 1;
    std::memcpy(bytes.data() + 8, &bumped, sizeof(bumped));
    const uint64_t sum = fnv1a64(bytes.data(), bytes.size() - sizeof(uint64_t));
    std::memcpy(bytes.data() + bytes.size() - sizeof(uint64_t), &sum, sizeof(sum));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();

    CHECK_THROWS_AS(load_checkpoint(path), VersionError);
}

TEST_CASE("checkpoint: missing file raises NotFound") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), NotFoundError);
}

TEST_CASE("train: two runs with one seed produce identical checkpoints and logs") {
    const Dataset data = synth_generate({2, 2, 8, 16, 0.05, 11});
    const LocoSplit split = split_loco(data.manifest, 1, 0.25);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.input_size = 16;
    cfg.feature_dim = 8;
    cfg.seed = 99;

    const TrainResult r1 = train(cfg, {split.train, data.store}, {split.val, data.store});
    const TrainResult r2 = train(cfg, {split.train, data.store}, {split.val, data.store});

    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t e = 0; e < r1.log.size(); ++e) {
        CHECK(r1.log[e].loss.total == r2.log[e].loss.total);
        CHECK(r1.log[e].val_top1 == r2.log[e].val_top1);
        CHECK(r1.log[e].val_top5 == r2.log[e].val_top5);
    }
    const fs::path p1 = temp_file("det1.bin"), p2 = temp_file("det2.bin");
    save_checkpoint(r1.best, p1);
    save_checkpoint(r2.best, p2);
    CHECK(files_identical(p1, p2));
}

TEST_CASE("train: different seeds diverge") {
    const Dataset data = synth_generate({2, 2, 8, 16, 0.05, 11});
    const LocoSplit split = split_loco(data.manifest, 1, 0.25);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.input_size = 16;
    cfg.feature_dim = 8;
    cfg.seed = 1;
    const TrainResult r1 = train(cfg, {split.train, data.store}, {split.val, data.store});
    cfg.seed = 2;
    const TrainResult r2 = train(cfg, {split.train, data.store}, {split.val, data.store});
    CHECK(r1.log[0].loss.total != r2.log[0].loss.total);
}

TEST_CASE("train: exploding learning rate trips the divergence guard") {
    const Dataset data = synth_generate({2, 2, 8, 16, 0.05, 12});
    const LocoSplit split = split_loco(data.manifest, 1, 0.25);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.input_size = 16;
    cfg.feature_dim = 8;
    cfg.lr = 1e18;
    cfg.seed = 3;
    CHECK_THROWS_AS(train(cfg, {split.train, data.store}, {split.val, data.store}), DivergedError);
}

TEST_CASE("train: unsampleable training manifest is rejected up front") {
    const Dataset data = synth_generate({2, 2, 4, 16, 0.05, 13});
    DatasetManifest crippled = data.manifest;
    std::erase_if(crippled.entries,
                  [](const ManifestEntry& e) { return e.action_id == 1 && e.view_id == 1; });
    std::erase_if(crippled.entries,
                  [](const ManifestEntry& e) { return e.action_id == 0 && e.view_id == 0; });
    // each view now has one action only
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.input_size = 16;
    cfg.feature_dim = 8;
    CHECK_THROWS_AS(train(cfg, {crippled, data.store}, {crippled, data.store}),
                    UnsampleableError);
}

TEST_CASE("metrics log: line-delimited records parse and carry every field") {
    std::vector<EpochRecord> log(2);
    log[0] = {0, 0.01, {0.5, 0.4, 0.3, 0.2, 1.4}, 50.0, 90.0, 1.25};
    log[1] = {1, 0.01, {0.4, 0.3, 0.2, 0.1, 1.0}, 60.0, 95.0, 1.5};
    const fs::path path = temp_file("metrics.log");
    write_metrics_log(log, path);

    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"epoch", "lr", "l_ace", "l_vce", "l_ac", "l_vc", "total",
                                "val_top1", "val_top5", "wall_time_s"}) {
            CHECK(j.contains(key));
        }
        ++lines;
    }
    CHECK(lines == 2);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_drop_epochs = {10, 10};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
