#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbmnet/image.hpp"

namespace dbmnet {

struct LabelSpace {
    std::vector<std::string> actions;
    std::vector<std::string> views;

    int num_actions() const { return static_cast<int>(actions.size()); }
    int num_views() const { return static_cast<int>(views.size()); }

    // A >= 2, V >= 2, names unique within each list.
    void validate() const;
    bool operator==(const LabelSpace&) const = default;
};

struct ManifestEntry {
    std::string source_id;
    int action_id = 0;
    int view_id = 0;
};

enum class ManifestOrigin { directory, synthetic };

struct DatasetManifest {
    LabelSpace label_space;
    std::vector<ManifestEntry> entries;
    ManifestOrigin origin = ManifestOrigin::directory;
    int skipped_files = 0;  // unreadable images recorded during loading

    size_t size() const { return entries.size(); }
    void validate() const;
};

struct SynthConfig {
    int actions = 6;
    int views = 4;
    int per_cell = 200;
    int image_size = 32;
    double noise_sigma = 0.05;
    uint64_t seed = 0;

    void validate() const;
};

// Resolves manifest source_ids to pixel data. Implementations are immutable
// once built and safe to share across threads.
class ImageStore {
public:
    virtual ~ImageStore() = default;
    // Returns a 3 x target_size x target_size image in [0, 1], resized with
    // bilinear interpolation. target_size <= 0 loads at the native size.
    virtual Image load(const std::string& source_id, int target_size) const = 0;
};

class SyntheticStore : public ImageStore {
public:
    Image load(const std::string& source_id, int target_size) const override;
    void put(const std::string& source_id, Image img);
    size_t size() const { return images_.size(); }
    const std::unordered_map<std::string, Image>& images() const { return images_; }

private:
    std::unordered_map<std::string, Image> images_;
};

// Decodes .png/.jpg/.jpeg files under a dataset root.
class DirectoryStore : public ImageStore {
public:
    explicit DirectoryStore(std::filesystem::path root) : root_(std::move(root)) {}
    Image load(const std::string& source_id, int target_size) const override;

private:
    std::filesystem::path root_;
};

// A manifest plus the store that resolves it.
struct Dataset {
    DatasetManifest manifest;
    std::shared_ptr<const ImageStore> store;
};

// Ingests a root/<view_name>/<action_name>/<image files> tree. Label space is
// inferred from directory names, sorted lexicographically. Unreadable image
// files are skipped and counted in manifest.skipped_files.
DatasetManifest load_manifest(const std::filesystem::path& root);
Dataset load_directory_dataset(const std::filesystem::path& root);

// Deterministic synthetic multi-view dataset. Action identity is encoded as a
// Gaussian blob position plus a stripe frequency; view identity as a fixed
// affine warp plus a channel color cast. Pure function of the config.
Dataset synth_generate(const SynthConfig& config);

struct LocoSplit {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

inline constexpr uint64_t kDefaultSplitSeed = 0x5911c0de5eedULL;

// Leave-one-camera-out split: test = all entries of test_view; the rest is a
// per-(action,view)-cell stratified train/val split.
LocoSplit split_loco(const DatasetManifest& manifest, int test_view, double val_fraction,
                     uint64_t seed = kDefaultSplitSeed);

struct TrainValSplit {
    DatasetManifest train;
    DatasetManifest val;
};

// Per-(action,view)-cell stratified split; every cell keeps at least one
// training entry.
TrainValSplit split_train_val(const DatasetManifest& manifest, double val_fraction,
                              uint64_t seed = kDefaultSplitSeed);

// Dumps a dataset to the directory layout as 8-bit PNGs.
void export_png_dataset(const Dataset& dataset, const std::filesystem::path& out_root);

}  // namespace dbmnet
