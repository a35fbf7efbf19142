#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dbmnet/dataset.hpp"
#include "dbmnet/evaluator.hpp"
#include "dbmnet/rng.hpp"

using namespace dbmnet;
namespace fs = std::filesystem;

namespace {

std::vector<float> onehotish(int winner, int k, float high = 5.0f) {
    std::vector<float> z(k, 0.0f);
    z[winner] = high;
    return z;
}

Checkpoint untrained_checkpoint(const Dataset& data, int input_size, int feature_dim,
                                uint64_t seed, bool identity_gate = false) {
    Checkpoint ckpt;
    ckpt.label_space = data.manifest.label_space;
    ckpt.model = ModelConfig{input_size, feature_dim, ckpt.label_space.num_actions(),
                             ckpt.label_space.num_views()};
    ckpt.params = init_params<float>(ckpt.model, seed, identity_gate);
    return ckpt;
}

}  // namespace

TEST_CASE("topk: all correct predictions give 100") {
    std::vector<std::vector<float>> logits;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
        logits.push_back(onehotish(i % 3, 6));
        labels.push_back(i % 3);
    }
    CHECK(topk_accuracy(logits, labels, 1) == 100.0);
}

TEST_CASE("topk: always second-ranked scores 0 at k=1 and 100 at k=5") {
    std::vector<std::vector<float>> logits;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
        std::vector<float> z(6, 0.0f);
        z[0] = 10.0f;  // winner is class 0
        z[1] = 5.0f;   // true label always second
        logits.push_back(z);
        labels.push_back(1);
    }
    CHECK(topk_accuracy(logits, labels, 1) == 0.0);
    CHECK(topk_accuracy(logits, labels, 5) == 100.0);
}

TEST_CASE("topk: hand-enumerated ranks {1,1,2,3,6,6}") {
    // construct 6 samples over 6 classes where the true label's rank is known
    std::vector<std::vector<float>> logits;
    std::vector<int> labels(6, 0);
    auto with_rank = [](int rank) {
        std::vector<float> z(6, 0.0f);
        // classes 1..rank-1 beat class 0; the rest lose
        for (int c = 1; c < rank; ++c) z[c] = 10.0f + static_cast<float>(c);
        z[0] = 5.0f;
        return z;
    };
    for (int rank : {1, 1, 2, 3, 6, 6}) logits.push_back(with_rank(rank));
    CHECK(topk_accuracy(logits, labels, 1) == doctest::Approx(100.0 * 2 / 6).epsilon(1e-12));
    CHECK(topk_accuracy(logits, labels, 5) == doctest::Approx(100.0 * 4 / 6).epsilon(1e-12));
}

TEST_CASE("topk: ties break toward the lower class index") {
    std::vector<std::vector<float>> logits{{1.0f, 1.0f, 0.0f}};
    // label 0 ties with class 1: class 0 wins the tie -> rank 1
    CHECK(topk_accuracy(logits, std::vector<int>{0}, 1) == 100.0);
    // label 1 ties with class 0: class 0 wins -> rank 2
    CHECK(topk_accuracy(logits, std::vector<int>{1}, 1) == 0.0);
    CHECK(topk_accuracy(logits, std::vector<int>{1}, 2) == 100.0);
}

TEST_CASE("topk: invariant under strictly increasing transforms") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<float>> logits(8), warped(8);
        std::vector<int> labels(8);
        for (int i = 0; i < 8; ++i) {
            logits[i].resize(6);
            warped[i].resize(6);
            for (int c = 0; c < 6; ++c) {
                logits[i][c] = static_cast<float>(rng.uniform(-4, 4));
                warped[i][c] = std::exp(0.5f * logits[i][c]) + 3.0f;  // strictly increasing
            }
            labels[i] = static_cast<int>(rng.uniform_int(6));
        }
        for (int k = 1; k <= 6; ++k) {
            CHECK(topk_accuracy(logits, labels, k) == topk_accuracy(warped, labels, k));
        }
    }
}

TEST_CASE("topk: top5 >= top1 over 1000 randomized reports") {
    Rng rng(73);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(12));
        std::vector<std::vector<float>> logits(n);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) {
            logits[i].resize(8);
            for (float& v : logits[i]) v = static_cast<float>(rng.uniform(-3, 3));
            labels[i] = static_cast<int>(rng.uniform_int(8));
        }
        CHECK(topk_accuracy(logits, labels, 5) >= topk_accuracy(logits, labels, 1));
    }
}

TEST_CASE("topk: empty batch raises EmptyEval") {
    std::vector<std::vector<float>> empty;
    std::vector<int> labels;
    CHECK_THROWS_AS(topk_accuracy(empty, labels, 1), EmptyEvalError);
}

TEST_CASE("confusion: perfect predictions are diagonal") {
    const std::vector<int> truth{0, 0, 1, 2, 2, 2};
    const auto m = confusion_matrix(truth, truth, 3);
    CHECK(m[0][0] == 2);
    CHECK(m[1][1] == 1);
    CHECK(m[2][2] == 3);
    int64_t off = 0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (r != c) off += m[r][c];
    CHECK(off == 0);
}

TEST_CASE("confusion: collapsing predictions fill a single column") {
    const std::vector<int> truth{0, 1, 2, 1};
    const std::vector<int> pred{0, 0, 0, 0};
    const auto m = confusion_matrix(pred, truth, 3);
    for (int r = 0; r < 3; ++r) {
        for (int c = 1; c < 3; ++c) CHECK(m[r][c] == 0);
    }
    CHECK(m[0][0] + m[1][0] + m[2][0] == 4);
}

TEST_CASE("confusion: totals and row sums match the sample counts") {
    Rng rng(79);
    std::vector<int> truth(200), pred(200);
    std::vector<int64_t> class_counts(5, 0);
    for (int i = 0; i < 200; ++i) {
        truth[i] = static_cast<int>(rng.uniform_int(5));
        pred[i] = static_cast<int>(rng.uniform_int(5));
        ++class_counts[truth[i]];
    }
    const auto m = confusion_matrix(pred, truth, 5);
    int64_t total = 0;
    for (int r = 0; r < 5; ++r) {
        const int64_t row = std::accumulate(m[r].begin(), m[r].end(), int64_t{0});
        CHECK(row == class_counts[r]);
        total += row;
    }
    CHECK(total == 200);
}

TEST_CASE("confusion: out-of-range labels raise LabelError") {
    const std::vector<int> truth{0, 5};
    const std::vector<int> pred{0, 1};
    CHECK_THROWS_AS(confusion_matrix(pred, truth, 3), LabelError);
}

TEST_CASE("evaluate: empty manifest raises EmptyEval") {
    const Dataset data = synth_generate({2, 2, 2, 16, 0.0, 31});
    Dataset empty = data;
    empty.manifest.entries.clear();
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 5);
    CHECK_THROWS_AS(evaluate(ckpt, empty), EmptyEvalError);
}

TEST_CASE("evaluate: label-space mismatch without a map raises LabelSpaceError") {
    const Dataset data = synth_generate({3, 2, 2, 16, 0.0, 32});
    const Dataset other = synth_generate({4, 2, 2, 16, 0.0, 32});
    const Checkpoint ckpt = untrained_checkpoint(other, 16, 8, 6);
    CHECK_THROWS_AS(evaluate(ckpt, data), LabelSpaceError);
}

TEST_CASE("evaluate: report invariants hold for an untrained model") {
    const Dataset data = synth_generate({3, 2, 4, 16, 0.0, 33});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 7);
    const EvalReport report = evaluate(ckpt, data);
    CHECK(report.n_samples == 24);
    CHECK(report.top5 >= report.top1);
    CHECK(report.top1 >= 0.0);
    CHECK(report.top5 <= 100.0);
    int64_t total = 0;
    for (const auto& row : report.confusion) {
        total += std::accumulate(row.begin(), row.end(), int64_t{0});
    }
    CHECK(total == report.n_samples);
}

TEST_CASE("evaluate: a converged tiny run memorizes its training set") {
    const Dataset data = synth_generate({3, 2, 20, 16, 0.02, 34});
    const LocoSplit split = split_loco(data.manifest, 1, 0.25);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.input_size = 16;
    cfg.feature_dim = 16;
    cfg.seed = 5;
    cfg.augment = false;
    const TrainResult result = train(cfg, {split.train, data.store}, {split.val, data.store});
    const EvalReport report = evaluate(result.best, {split.train, data.store});
    INFO("train top1 = ", report.top1);
    CHECK(report.top1 > 90.0);
}

TEST_CASE("cross_dataset_eval: the identity map reproduces evaluate") {
    const Dataset data = synth_generate({3, 2, 3, 16, 0.0, 35});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 8);
    const EvalReport direct = evaluate(ckpt, data);
    const EvalReport mapped = cross_dataset_eval(ckpt, data, LabelMap::identity(3));
    CHECK(direct.top1 == mapped.top1);
    CHECK(direct.top5 == mapped.top5);
    CHECK(direct.confusion == mapped.confusion);
    CHECK(mapped.n_dropped == 0);
}

TEST_CASE("cross_dataset_eval: merging two source classes merges their truth rows") {
    const Dataset data = synth_generate({3, 2, 4, 16, 0.0, 36});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 9);
    LabelMap map;
    map.target_for_source = {0, 0, 2};  // source classes 0 and 1 both land on target 0
    const EvalReport report = cross_dataset_eval(ckpt, data, map);
    CHECK(report.n_samples == 24);
    const int64_t merged_row =
        std::accumulate(report.confusion[0].begin(), report.confusion[0].end(), int64_t{0});
    CHECK(merged_row == 16);  // 8 samples of source class 0 + 8 of source class 1
    const int64_t row1 =
        std::accumulate(report.confusion[1].begin(), report.confusion[1].end(), int64_t{0});
    CHECK(row1 == 0);
}

TEST_CASE("cross_dataset_eval: dropped classes are excluded and counted") {
    const Dataset data = synth_generate({4, 2, 3, 16, 0.0, 37});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 10);
    LabelMap map;
    map.target_for_source = {0, 1, 2, LabelMap::kDrop};
    const EvalReport report = cross_dataset_eval(ckpt, data, map);
    CHECK(report.n_samples == 18);
    CHECK(report.n_dropped == 6);
}

TEST_CASE("cross_dataset_eval: restricted ranking ignores unmapped logits") {
    const Dataset data = synth_generate({2, 2, 2, 16, 0.0, 38});
    // checkpoint with 4 actions; foreign data uses only targets {2, 3}
    Dataset wide = synth_generate({4, 2, 2, 16, 0.0, 38});
    Checkpoint ckpt = untrained_checkpoint(wide, 16, 8, 11);
    // rig the action head so unmapped class 0 always has the top logit
    ckpt.params.act_b.data = {100.0f, -100.0f, 0.0f, 0.0f};
    LabelMap map;
    map.target_for_source = {2, 3};
    const EvalReport restricted = cross_dataset_eval(ckpt, data, map, true);
    const EvalReport full = cross_dataset_eval(ckpt, data, map, false);
    CHECK(full.top1 == 0.0);          // class 0 swamps every ranking
    CHECK(restricted.top1 > 0.0);     // competition limited to {2, 3}
    CHECK(restricted.top5 == 100.0);  // both mapped classes fit in the top-k
}

TEST_CASE("cross_dataset_eval: uncovered foreign classes are rejected") {
    const Dataset data = synth_generate({3, 2, 2, 16, 0.0, 39});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 12);
    LabelMap map;
    map.target_for_source = {0, 1};  // class 2 uncovered
    CHECK_THROWS_AS(cross_dataset_eval(ckpt, data, map), LabelMapError);
}

TEST_CASE("report files: JSON and CSV match the report") {
    const Dataset data = synth_generate({3, 2, 3, 16, 0.0, 40});
    const Checkpoint ckpt = untrained_checkpoint(data, 16, 8, 13);
    const EvalReport report = evaluate(ckpt, data);
    const fs::path dir = fs::temp_directory_path() / "dbmnet_report_test";
    fs::create_directories(dir);
    write_report_json(report, ckpt.label_space, dir / "report.json");
    write_confusion_csv(report, ckpt.label_space, dir / "confusion.csv");

    std::ifstream jin(dir / "report.json");
    nlohmann::json j;
    jin >> j;
    CHECK(j.at("top1").get<double>() == report.top1);
    CHECK(j.at("n_samples").get<int64_t>() == report.n_samples);

    std::ifstream cin(dir / "confusion.csv");
    std::string header;
    std::getline(cin, header);
    CHECK(header == "a00,a01,a02");
    int rows = 0;
    std::string line;
    while (std::getline(cin, line)) ++rows;
    CHECK(rows == 3);
}
