#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbmnet/augment.hpp"
#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"
#include "dbmnet/evaluator.hpp"
#include "dbmnet/probe.hpp"
#include "dbmnet/runspec.hpp"
#include "dbmnet/sampler.hpp"
#include "dbmnet/trainer.hpp"

namespace fs = std::filesystem;
using dbmnet::RunSpec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

struct CommonOpts {
    std::string config_file;
    std::string preset;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string run_name;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_file, "JSON config file");
    cmd->add_option("-p,--preset", opts.preset, "built-in preset: desk, paper, tiny");
    cmd->add_option("-s,--set", opts.overrides,
                    "override a config value, e.g. --set train.lr=0.02 (repeatable)");
    cmd->add_option("-o,--out", opts.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("-n,--name", opts.run_name, "run name (overrides config run_name)");
}

RunSpec build_spec(const CommonOpts& opts) {
    RunSpec spec;
    if (!opts.preset.empty()) spec = RunSpec::preset(opts.preset);
    if (!opts.config_file.empty()) {
        RunSpec from_file = RunSpec::from_file(opts.config_file);
        if (!opts.preset.empty()) {
            // preset first, file on top: file wins wherever it sets a key
            nlohmann::json base = nlohmann::json::parse(spec.to_json_text());
            std::ifstream in(opts.config_file);
            nlohmann::json overlay = nlohmann::json::parse(in);
            base.merge_patch(overlay);
            spec = RunSpec::from_json_text(base.dump());
        } else {
            spec = from_file;
        }
    }
    for (const auto& o : opts.overrides) spec.apply_override(o);
    if (!opts.out_dir.empty()) spec.out_dir = opts.out_dir;
    if (!opts.run_name.empty()) spec.run_name = opts.run_name;
    spec.validate();
    return spec;
}

fs::path make_run_dir(const RunSpec& spec) {
    const fs::path dir = spec.out_dir / spec.run_name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw dbmnet::IoError("cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

int cmd_synth(const CommonOpts& opts, const std::string& export_dir) {
    RunSpec spec = build_spec(opts);
    if (spec.data_kind != RunSpec::DataKind::synthetic) {
        throw dbmnet::ConfigError("synth requires dataset.kind=synthetic");
    }
    const dbmnet::Dataset ds = dbmnet::synth_generate(spec.synth);
    const fs::path out = export_dir.empty()
                             ? spec.out_dir / spec.run_name / "synthetic"
                             : fs::path(export_dir);
    dbmnet::export_png_dataset(ds, out);
    dbmnet::write_run_manifest(out, "synth", spec);
    std::cout << "wrote " << ds.manifest.entries.size() << " images under " << out.string()
              << "\n";
    return kExitOk;
}

int cmd_train(const CommonOpts& opts) {
    RunSpec spec = build_spec(opts);
    const dbmnet::Dataset full = spec.open_dataset();

    dbmnet::Dataset train_ds, val_ds;
    if (spec.test_view >= 0) {
        const auto split = dbmnet::split_loco(full.manifest, spec.test_view, spec.val_fraction,
                                              spec.split_seed);
        train_ds = {split.train, full.store};
        val_ds = {split.val, full.store};
    } else {
        const auto split = dbmnet::split_train_val(full.manifest, spec.val_fraction,
                                                   spec.split_seed);
        train_ds = {split.train, full.store};
        val_ds = {split.val, full.store};
    }

    const dbmnet::TrainResult result = dbmnet::train(spec.train, train_ds, val_ds);
    const fs::path dir = make_run_dir(spec);
    dbmnet::save_checkpoint(result.best, dir / "checkpoint.bin");
    dbmnet::write_metrics_log(result.log, dir / "metrics.log");
    dbmnet::write_run_manifest(dir, "train", spec);
    std::printf("best epoch %d, val top-1 %.2f%%; checkpoint at %s\n", result.best.epoch,
                result.best.val_top1, (dir / "checkpoint.bin").c_str());
    return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data_path,
             const std::string& label_map_path) {
    RunSpec spec = build_spec(opts);
    const dbmnet::Checkpoint ckpt = dbmnet::load_checkpoint(ckpt_path);
    dbmnet::Dataset data;
    if (!data_path.empty()) {
        data = dbmnet::load_directory_dataset(data_path);
    } else {
        data = spec.open_dataset();
        if (spec.test_view >= 0) {
            const auto split = dbmnet::split_loco(data.manifest, spec.test_view,
                                                  spec.val_fraction, spec.split_seed);
            data = {split.test, data.store};
        }
    }

    dbmnet::EvalReport report;
    if (!label_map_path.empty()) {
        const auto map = dbmnet::LabelMap::load(label_map_path, ckpt.label_space);
        report = dbmnet::cross_dataset_eval(ckpt, data, map, spec.restrict_to_mapped);
    } else {
        report = dbmnet::evaluate(ckpt, data);
    }

    const fs::path dir = make_run_dir(spec);
    dbmnet::write_report_json(report, ckpt.label_space, dir / "report.json");
    dbmnet::write_confusion_csv(report, ckpt.label_space, dir / "confusion.csv");
    dbmnet::write_run_manifest(dir, "eval", spec);
    std::printf("top-1 %.2f%%  top-5 %.2f%%  (n=%lld, dropped=%lld)\n", report.top1, report.top5,
                static_cast<long long>(report.n_samples),
                static_cast<long long>(report.n_dropped));
    return kExitOk;
}

int cmd_loco(const CommonOpts& opts) {
    RunSpec spec = build_spec(opts);
    const dbmnet::Dataset data = spec.open_dataset();
    const fs::path dir = make_run_dir(spec);
    const dbmnet::LocoReport report =
        dbmnet::run_loco(data, spec.train, spec.val_fraction, dir, spec.split_seed);
    dbmnet::write_run_manifest(dir, "loco", spec);
    std::printf("LOCO mean top-1 %.2f%%  mean top-5 %.2f%% over %zu folds\n", report.mean_top1,
                report.mean_top5, report.folds.size());
    for (const auto& fold : report.folds) {
        std::printf("  fold %s: top-1 %.2f%%  top-5 %.2f%%\n", fold.held_out_view.c_str(),
                    fold.report.top1, fold.report.top5);
    }
    return kExitOk;
}

int cmd_probe(const CommonOpts& opts, const std::string& ckpt_path) {
    RunSpec spec = build_spec(opts);
    const dbmnet::Checkpoint ckpt = dbmnet::load_checkpoint(ckpt_path);
    dbmnet::Dataset full = spec.open_dataset();
    if (!(full.manifest.label_space == ckpt.label_space)) {
        throw dbmnet::LabelSpaceError("probe: dataset label space differs from checkpoint's");
    }

    dbmnet::Dataset train_ds, val_ds;
    if (spec.test_view >= 0) {
        const auto split = dbmnet::split_loco(full.manifest, spec.test_view, spec.val_fraction,
                                              spec.split_seed);
        train_ds = {split.train, full.store};
        val_ds = {split.val, full.store};
    } else {
        throw dbmnet::ConfigError("probe requires split.test_view >= 0 so the MDC sees the "
                                  "training/validation views");
    }

    const auto report = dbmnet::probe_view_drop(ckpt, train_ds, val_ds);
    const fs::path dir = make_run_dir(spec);
    nlohmann::json j{{"acc_pre", report.acc_pre},
                     {"acc_post", report.acc_post},
                     {"drop", report.drop}};
    std::ofstream out(dir / "probe_report.json", std::ios::trunc);
    out << j.dump(2) << "\n";

    const auto pre = dbmnet::extract_features(ckpt, val_ds, dbmnet::FeatureStage::pre);
    const auto post = dbmnet::extract_features(ckpt, val_ds, dbmnet::FeatureStage::post);
    dbmnet::export_embeddings(pre, dir / "embeddings_pre.csv");
    dbmnet::export_embeddings(post, dir / "embeddings_post.csv");
    dbmnet::write_run_manifest(dir, "probe", spec);
    std::printf("view MDC accuracy: %.2f%% -> %.2f%% (drop %.2f points)\n", report.acc_pre,
                report.acc_post, report.drop);
    return kExitOk;
}

int cmd_gradcheck(const CommonOpts& opts) {
    CommonOpts tiny_default = opts;
    if (tiny_default.preset.empty() && tiny_default.config_file.empty()) {
        tiny_default.preset = "tiny";
    }
    RunSpec spec = build_spec(tiny_default);
    const dbmnet::Dataset data = spec.open_dataset();
    dbmnet::TripletSampler sampler(data.manifest);
    dbmnet::Rng rng(dbmnet::mix_seed(spec.train.seed, 42));
    const auto batch = sampler.sample(spec.train.batch_size, rng);

    std::vector<dbmnet::Image> a_imgs, sv_imgs, sa_imgs;
    std::vector<int> a_labels, v_labels;
    for (const auto& t : batch.triplets) {
        const auto& ea = data.manifest.entries[t.anchor];
        a_imgs.push_back(data.store->load(ea.source_id, spec.train.input_size));
        sv_imgs.push_back(
            data.store->load(data.manifest.entries[t.same_view].source_id, spec.train.input_size));
        sa_imgs.push_back(data.store->load(data.manifest.entries[t.same_action].source_id,
                                           spec.train.input_size));
        a_labels.push_back(ea.action_id);
        v_labels.push_back(ea.view_id);
    }

    const dbmnet::ModelConfig mc{spec.train.input_size, spec.train.feature_dim,
                                 data.manifest.label_space.num_actions(),
                                 data.manifest.label_space.num_views()};
    const auto params = dbmnet::init_params<double>(mc, dbmnet::mix_seed(spec.train.seed, 1));

    bool ok = true;
    for (const bool stop : {false, true}) {
        const auto report = dbmnet::gradient_check(mc, params, a_imgs, sv_imgs, sa_imgs, a_labels,
                                                   v_labels, spec.train.loss, stop);
        std::printf("stop_gradient_pv=%d: max_rel_err %.3e at %s (checked %lld)\n", stop ? 1 : 0,
                    report.max_rel_err, report.worst_parameter.c_str(),
                    static_cast<long long>(report.checked));
        ok = ok && report.max_rel_err < 1e-4;
    }
    if (!ok) {
        std::fprintf(stderr, "{\"error\":\"numeric\",\"message\":\"gradient check failed\"}\n");
        return kExitNumeric;
    }
    return kExitOk;
}

int exit_code_for(const dbmnet::Error& e) {
    switch (e.kind()) {
        case dbmnet::ErrorKind::config: return kExitConfig;
        case dbmnet::ErrorKind::data: return kExitData;
        case dbmnet::ErrorKind::numeric: return kExitNumeric;
        case dbmnet::ErrorKind::io: return kExitIo;
    }
    return kExitIo;
}

const char* kind_name(dbmnet::ErrorKind k) {
    switch (k) {
        case dbmnet::ErrorKind::config: return "config";
        case dbmnet::ErrorKind::data: return "data";
        case dbmnet::ErrorKind::numeric: return "numeric";
        case dbmnet::ErrorKind::io: return "io";
    }
    return "io";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"view-invariant driver action classification toolkit"};
    app.require_subcommand(1);

    CommonOpts synth_opts, train_opts, eval_opts, loco_opts, probe_opts, grad_opts;
    std::string export_dir, ckpt_path, data_path, label_map_path, probe_ckpt;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and export PNGs");
    add_common(synth, synth_opts);
    synth->add_option("--export", export_dir, "export directory (default <out>/<name>/synthetic)");

    auto* train = app.add_subcommand("train", "train a model, write checkpoint + metrics log");
    add_common(train, train_opts);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval, eval_opts);
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset directory (default: config dataset)");
    eval->add_option("--label-map", label_map_path, "JSON label map for cross-dataset eval");

    auto* loco = app.add_subcommand("loco", "full leave-one-camera-out round");
    add_common(loco, loco_opts);

    auto* probe = app.add_subcommand("probe", "view-information probe + embedding export");
    add_common(probe, probe_opts);
    probe->add_option("--checkpoint", probe_ckpt, "checkpoint file")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient oracle");
    add_common(grad, grad_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_opts, export_dir);
        if (train->parsed()) return cmd_train(train_opts);
        if (eval->parsed()) return cmd_eval(eval_opts, ckpt_path, data_path, label_map_path);
        if (loco->parsed()) return cmd_loco(loco_opts);
        if (probe->parsed()) return cmd_probe(probe_opts, probe_ckpt);
        if (grad->parsed()) return cmd_gradcheck(grad_opts);
    } catch (const dbmnet::Error& e) {
        std::fprintf(stderr, "{\"error\":\"%s\",\"message\":\"%s\"}\n", kind_name(e.kind()),
                     e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "{\"error\":\"io\",\"message\":\"%s\"}\n", e.what());
        return kExitIo;
    }
    return kExitOk;
}
