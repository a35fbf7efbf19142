#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dbmnet/dataset.hpp"
#include "dbmnet/trainer.hpp"

namespace dbmnet {

// One experiment description: dataset source, split, training recipe.
// Parsed from a JSON config file with strict (unknown keys rejected)
// validation; flag overrides use dotted paths like "train.lr=0.02".
struct RunSpec {
    std::string run_name = "run";
    std::filesystem::path out_dir = "runs";

    enum class DataKind { synthetic, directory };
    DataKind data_kind = DataKind::synthetic;
    SynthConfig synth;
    std::filesystem::path data_root;

    double val_fraction = 0.2;
    int test_view = -1;  // < 0: no held-out view (train/val over everything)
    uint64_t split_seed = kDefaultSplitSeed;

    TrainConfig train;
    bool restrict_to_mapped = true;

    static RunSpec preset(const std::string& name);  // "desk", "paper", "tiny"
    static RunSpec from_json_text(const std::string& text);
    static RunSpec from_file(const std::filesystem::path& path);

    void apply_override(const std::string& dotted_assignment);
    void validate() const;
    std::string to_json_text() const;  // canonical echo; reparses to the same spec
    uint64_t config_hash() const;

    Dataset open_dataset() const;  // synth_generate or directory load
};

inline constexpr const char* kProjectVersion = "0.1.0";

// Written beside every command's outputs: the inputs that determine them.
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const RunSpec& spec);

}  // namespace dbmnet
