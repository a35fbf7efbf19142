#include "dbmnet/runspec.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dbmnet/checkpoint.hpp"

namespace dbmnet {

namespace {

using Json = nlohmann::json;

void reject_unknown_keys(const Json& obj, const std::set<std::string>& allowed,
                         const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown config key: " + path + it.key());
        }
    }
}

template <typename T>
void read_if(const Json& obj, const char* key, T& into) {
    if (obj.contains(key)) into = obj.at(key).get<T>();
}

Json spec_to_json(const RunSpec& s) {
    Json j;
    j["run_name"] = s.run_name;
    j["out_dir"] = s.out_dir.string();
    if (s.data_kind == RunSpec::DataKind::synthetic) {
        j["dataset"] = {{"kind", "synthetic"},       {"actions", s.synth.actions},
                        {"views", s.synth.views},    {"per_cell", s.synth.per_cell},
                        {"image_size", s.synth.image_size}, {"noise_sigma", s.synth.noise_sigma},
                        {"seed", s.synth.seed}};
    } else {
        j["dataset"] = {{"kind", "directory"}, {"root", s.data_root.string()}};
    }
    j["split"] = {{"val_fraction", s.val_fraction},
                  {"test_view", s.test_view},
                  {"seed", s.split_seed}};
    j["train"] = {{"epochs", s.train.epochs},
                  {"batch_size", s.train.batch_size},
                  {"lr", s.train.lr},
                  {"momentum", s.train.momentum},
                  {"weight_decay", s.train.weight_decay},
                  {"lr_drop_epochs", s.train.lr_drop_epochs},
                  {"lr_drop_factor", s.train.lr_drop_factor},
                  {"seed", s.train.seed},
                  {"stop_gradient_pv", s.train.stop_gradient_pv},
                  {"input_size", s.train.input_size},
                  {"feature_dim", s.train.feature_dim},
                  {"augment", s.train.augment},
                  {"balanced_anchors", s.train.balanced_anchors},
                  {"decay_queries", s.train.decay_queries},
                  {"identity_gate", s.train.identity_gate}};
    j["loss"] = {{"lambda_ac", s.train.loss.lambda_ac},
                 {"lambda_vc", s.train.loss.lambda_vc},
                 {"delta", s.train.loss.delta}};
    j["eval"] = {{"restrict_to_mapped", s.restrict_to_mapped}};
    return j;
}

RunSpec spec_from_json(const Json& j) {
    RunSpec s;
    reject_unknown_keys(j, {"run_name", "out_dir", "dataset", "split", "train", "loss", "eval"},
                        "");
    read_if(j, "run_name", s.run_name);
    if (j.contains("out_dir")) s.out_dir = j.at("out_dir").get<std::string>();

    if (j.contains("dataset")) {
        const Json& d = j.at("dataset");
        reject_unknown_keys(
            d, {"kind", "actions", "views", "per_cell", "image_size", "noise_sigma", "seed", "root"},
            "dataset.");
        const std::string kind = d.value("kind", "synthetic");
        if (kind == "synthetic") {
            s.data_kind = RunSpec::DataKind::synthetic;
            read_if(d, "actions", s.synth.actions);
            read_if(d, "views", s.synth.views);
            read_if(d, "per_cell", s.synth.per_cell);
            read_if(d, "image_size", s.synth.image_size);
            read_if(d, "noise_sigma", s.synth.noise_sigma);
            read_if(d, "seed", s.synth.seed);
        } else if (kind == "directory") {
            s.data_kind = RunSpec::DataKind::directory;
            if (!d.contains("root")) throw ConfigError("dataset.root required for kind=directory");
            s.data_root = d.at("root").get<std::string>();
        } else {
            throw ConfigError("dataset.kind must be 'synthetic' or 'directory'");
        }
    }
    if (j.contains("split")) {
        const Json& sp = j.at("split");
        reject_unknown_keys(sp, {"val_fraction", "test_view", "seed"}, "split.");
        read_if(sp, "val_fraction", s.val_fraction);
        read_if(sp, "test_view", s.test_view);
        read_if(sp, "seed", s.split_seed);
    }
    if (j.contains("train")) {
        const Json& t = j.at("train");
        reject_unknown_keys(t,
                            {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                             "lr_drop_epochs", "lr_drop_factor", "seed", "stop_gradient_pv",
                             "input_size", "feature_dim", "augment", "balanced_anchors",
                             "decay_queries", "identity_gate"},
                            "train.");
        read_if(t, "epochs", s.train.epochs);
        read_if(t, "batch_size", s.train.batch_size);
        read_if(t, "lr", s.train.lr);
        read_if(t, "momentum", s.train.momentum);
        read_if(t, "weight_decay", s.train.weight_decay);
        read_if(t, "lr_drop_epochs", s.train.lr_drop_epochs);
        read_if(t, "lr_drop_factor", s.train.lr_drop_factor);
        read_if(t, "seed", s.train.seed);
        read_if(t, "stop_gradient_pv", s.train.stop_gradient_pv);
        read_if(t, "input_size", s.train.input_size);
        read_if(t, "feature_dim", s.train.feature_dim);
        read_if(t, "augment", s.train.augment);
        read_if(t, "balanced_anchors", s.train.balanced_anchors);
        read_if(t, "decay_queries", s.train.decay_queries);
        read_if(t, "identity_gate", s.train.identity_gate);
    }
    if (j.contains("loss")) {
        const Json& l = j.at("loss");
        reject_unknown_keys(l, {"lambda_ac", "lambda_vc", "delta"}, "loss.");
        read_if(l, "lambda_ac", s.train.loss.lambda_ac);
        read_if(l, "lambda_vc", s.train.loss.lambda_vc);
        read_if(l, "delta", s.train.loss.delta);
    }
    if (j.contains("eval")) {
        const Json& e = j.at("eval");
        reject_unknown_keys(e, {"restrict_to_mapped"}, "eval.");
        read_if(e, "restrict_to_mapped", s.restrict_to_mapped);
    }
    return s;
}

}  // namespace

RunSpec RunSpec::preset(const std::string& name) {
    RunSpec s;
    if (name == "desk") {
        // synthetic data at desk scale; defaults already match
        s.run_name = "desk";
    } else if (name == "paper") {
        s.run_name = "paper";
        s.data_kind = DataKind::directory;
        s.train.epochs = 50;
        s.train.input_size = 224;
    } else if (name == "tiny") {
        s.run_name = "tiny";
        s.synth = SynthConfig{4, 3, 3, 8, 0.05, 7};
        s.train.epochs = 2;
        s.train.batch_size = 2;
        s.train.input_size = 8;
        s.train.feature_dim = 8;
    } else {
        throw ConfigError("unknown preset: " + name + " (expected desk, paper, or tiny)");
    }
    return s;
}

RunSpec RunSpec::from_json_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return spec_from_json(j);
}

RunSpec RunSpec::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void RunSpec::apply_override(const std::string& dotted_assignment) {
    const auto eq = dotted_assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like section.key=value: " + dotted_assignment);
    }
    const std::string path = dotted_assignment.substr(0, eq);
    const std::string value = dotted_assignment.substr(eq + 1);

    Json j = Json::parse(to_json_text());
    Json* node = &j;
    size_t start = 0;
    std::vector<std::string> parts;
    for (;;) {
        const auto dot = path.find('.', start);
        parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) throw ConfigError("unknown config key: " + path);
        node = &(*node)[parts[i]];
    }
    Json parsed;
    try {
        parsed = Json::parse(value);
    } catch (const Json::exception&) {
        parsed = value;  // plain string
    }
    (*node)[parts.back()] = parsed;
    *this = spec_from_json(j);
}

void RunSpec::validate() const {
    if (run_name.empty()) throw ConfigError("run_name must not be empty");
    if (data_kind == DataKind::synthetic) {
        synth.validate();
    } else if (data_root.empty()) {
        throw ConfigError("dataset.root required for kind=directory");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("split.val_fraction must lie in (0, 1)");
    }
    train.validate();
}

std::string RunSpec::to_json_text() const { return spec_to_json(*this).dump(2); }

uint64_t RunSpec::config_hash() const {
    const std::string text = spec_to_json(*this).dump();
    return fnv1a64(text.data(), text.size());
}

Dataset RunSpec::open_dataset() const {
    if (data_kind == DataKind::synthetic) return synth_generate(synth);
    return load_directory_dataset(data_root);
}

void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const RunSpec& spec) {
    Json j;
    j["command"] = command;
    j["config_hash"] = spec.config_hash();
    j["seed"] = spec.train.seed;
    j["version"] = kProjectVersion;
    std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write run_manifest.json under " + dir.string());
    out << j.dump(2) << "\n";
    std::ofstream echo(dir / "config_echo.json", std::ios::trunc);
    if (!echo) throw IoError("cannot write config_echo.json under " + dir.string());
    echo << spec.to_json_text() << "\n";
}

}  // namespace dbmnet
