#include "dbmnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>

namespace dbmnet {

namespace fs = std::filesystem;

void LabelSpace::validate() const {
    if (num_actions() < 2) throw ConfigError("label space needs at least 2 actions");
    if (num_views() < 2) throw ConfigError("label space needs at least 2 views");
    std::set<std::string> a(actions.begin(), actions.end());
    std::set<std::string> v(views.begin(), views.end());
    if (a.size() != actions.size()) throw ConfigError("duplicate action names");
    if (v.size() != views.size()) throw ConfigError("duplicate view names");
}

void DatasetManifest::validate() const {
    label_space.validate();
    if (entries.empty()) throw MalformedLayoutError("manifest has no entries");
    for (const auto& e : entries) {
        if (e.action_id < 0 || e.action_id >= label_space.num_actions() || e.view_id < 0 ||
            e.view_id >= label_space.num_views()) {
            throw LabelError("manifest entry '" + e.source_id + "' has out-of-range labels");
        }
    }
}

void SynthConfig::validate() const {
    if (actions < 2) throw ConfigError("synth: actions must be >= 2");
    if (views < 2) throw ConfigError("synth: views must be >= 2");
    if (per_cell < 1) throw ConfigError("synth: per_cell must be >= 1");
    if (image_size < 8) throw ConfigError("synth: image_size must be >= 8");
    if (noise_sigma < 0) throw ConfigError("synth: noise_sigma must be >= 0");
}

Image SyntheticStore::load(const std::string& source_id, int target_size) const {
    auto it = images_.find(source_id);
    if (it == images_.end()) throw NotFoundError("synthetic image not found: " + source_id);
    if (target_size <= 0) return it->second;
    return resize_bilinear(it->second, target_size, target_size);
}

void SyntheticStore::put(const std::string& source_id, Image img) {
    images_.emplace(source_id, std::move(img));
}

namespace {

Image decode_image_file(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
    Image out(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            out.at(0, y, x) = row[x][2] / 255.0f;
            out.at(1, y, x) = row[x][1] / 255.0f;
            out.at(2, y, x) = row[x][0] / 255.0f;
        }
    }
    return out;
}

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string cell_source_id(const std::string& view, const std::string& action,
                           const std::string& leaf) {
    return view + "/" + action + "/" + leaf;
}

}  // namespace

Image DirectoryStore::load(const std::string& source_id, int target_size) const {
    Image img = decode_image_file(root_ / source_id);
    if (target_size <= 0) return img;
    return resize_bilinear(img, target_size, target_size);
}

DatasetManifest load_manifest(const fs::path& root) {
    if (!fs::exists(root)) throw NotFoundError("dataset root not found: " + root.string());
    if (!fs::is_directory(root)) throw NotFoundError("dataset root is not a directory: " + root.string());

    std::vector<std::string> view_names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) view_names.push_back(entry.path().filename().string());
    }
    std::sort(view_names.begin(), view_names.end());
    if (view_names.empty()) throw MalformedLayoutError("no view directories under " + root.string());

    // Action space is the union of action directory names across views.
    std::set<std::string> action_set;
    for (const auto& view : view_names) {
        size_t actions_here = 0;
        for (const auto& entry : fs::directory_iterator(root / view)) {
            if (entry.is_directory()) {
                action_set.insert(entry.path().filename().string());
                ++actions_here;
            }
        }
        if (actions_here == 0) {
            throw MalformedLayoutError("view directory '" + view + "' has no action subdirectories");
        }
    }

    DatasetManifest manifest;
    manifest.origin = ManifestOrigin::directory;
    manifest.label_space.views = view_names;
    manifest.label_space.actions.assign(action_set.begin(), action_set.end());
    manifest.label_space.validate();

    for (int v = 0; v < manifest.label_space.num_views(); ++v) {
        for (int a = 0; a < manifest.label_space.num_actions(); ++a) {
            const fs::path cell = root / view_names[v] / manifest.label_space.actions[a];
            if (!fs::is_directory(cell)) continue;  // missing cell: zero entries
            std::vector<std::string> files;
            for (const auto& entry : fs::directory_iterator(cell)) {
                if (entry.is_regular_file() && has_image_extension(entry.path())) {
                    files.push_back(entry.path().filename().string());
                }
            }
            std::sort(files.begin(), files.end());
            for (const auto& leaf : files) {
                // Validate decodability up front; bad files are skipped with
                // a warning count rather than failing the whole load.
                try {
                    decode_image_file(cell / leaf);
                } catch (const IoError&) {
                    ++manifest.skipped_files;
                    continue;
                }
                manifest.entries.push_back(
                    {cell_source_id(view_names[v], manifest.label_space.actions[a], leaf), a, v});
            }
        }
    }
    if (manifest.entries.empty()) throw MalformedLayoutError("no readable images under " + root.string());
    return manifest;
}

Dataset load_directory_dataset(const fs::path& root) {
    Dataset ds;
    ds.manifest = load_manifest(root);
    ds.store = std::make_shared<DirectoryStore>(root);
    return ds;
}

namespace {

std::string synth_action_name(int a) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "a%02d", a);
    return buf;
}

std::string synth_view_name(int v) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "v%02d", v);
    return buf;
}

// Action pattern in the canonical frame: a bright Gaussian blob at angle
// 2*pi*a/A on a circle of radius 0.3*S, plus horizontal stripes of spatial
// frequency a+1 at 20% amplitude.
double synth_base_intensity(double x, double y, int action, int num_actions, int size) {
    const double cx = (size - 1) * 0.5;
    const double cy = (size - 1) * 0.5;
    const double theta = 2.0 * std::numbers::pi * action / num_actions;
    const double bx = cx + 0.3 * size * std::cos(theta);
    const double by = cy + 0.3 * size * std::sin(theta);
    const double blob_sigma = 0.10 * size;
    const double dx = x - bx;
    const double dy = y - by;
    const double blob = 0.9 * std::exp(-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma));
    const double stripes =
        0.2 * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * (action + 1) * y / size));
    return blob + stripes;
}

struct ViewTransform {
    double cos_phi, sin_phi;  // rotation angle 90deg * v / V
    double tx, ty;            // translation (v mod 2, v div 2) * 0.1 * S
};

ViewTransform view_transform(int view, int num_views, int size) {
    const double phi = 0.5 * std::numbers::pi * view / num_views;
    return {std::cos(phi), std::sin(phi), (view % 2) * 0.1 * size, (view / 2) * 0.1 * size};
}

constexpr double kColorCasts[4][3] = {
    {1.0, 0.8, 0.8}, {0.8, 1.0, 0.8}, {0.8, 0.8, 1.0}, {1.0, 1.0, 0.8}};

}  // namespace

Dataset synth_generate(const SynthConfig& config) {
    config.validate();
    const int S = config.image_size;
    const double cx = (S - 1) * 0.5;
    const double cy = (S - 1) * 0.5;

    DatasetManifest manifest;
    manifest.origin = ManifestOrigin::synthetic;
    for (int a = 0; a < config.actions; ++a) manifest.label_space.actions.push_back(synth_action_name(a));
    for (int v = 0; v < config.views; ++v) manifest.label_space.views.push_back(synth_view_name(v));
    manifest.label_space.validate();

    auto store = std::make_shared<SyntheticStore>();
    for (int v = 0; v < config.views; ++v) {
        const ViewTransform t = view_transform(v, config.views, S);
        const double* cast = kColorCasts[v % 4];
        for (int a = 0; a < config.actions; ++a) {
            for (int i = 0; i < config.per_cell; ++i) {
                const uint64_t sample_key =
                    (static_cast<uint64_t>(a) * config.views + v) * config.per_cell + i;
                Rng rng(mix_seed(config.seed, sample_key));
                Image img(S, S);
                for (int y = 0; y < S; ++y) {
                    for (int x = 0; x < S; ++x) {
                        // inverse view transform back to the canonical frame
                        const double ux = x - t.tx - cx;
                        const double uy = y - t.ty - cy;
                        const double xc = t.cos_phi * ux + t.sin_phi * uy + cx;
                        const double yc = -t.sin_phi * ux + t.cos_phi * uy + cy;
                        const double base = synth_base_intensity(xc, yc, a, config.actions, S);
                        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(base * cast[c]);
                    }
                }
                if (config.noise_sigma > 0) {
                    for (float& val : img.data) {
                        val += static_cast<float>(config.noise_sigma * rng.normal());
                    }
                }
                clamp_unit(img);

                char leaf[16];
                std::snprintf(leaf, sizeof(leaf), "%04d", i);
                const std::string source_id =
                    cell_source_id(synth_view_name(v), synth_action_name(a), leaf);
                store->put(source_id, std::move(img));
                manifest.entries.push_back({source_id, a, v});
            }
        }
    }
    return {std::move(manifest), std::move(store)};
}

LocoSplit split_loco(const DatasetManifest& manifest, int test_view, double val_fraction,
                     uint64_t seed) {
    manifest.validate();
    const int V = manifest.label_space.num_views();
    const int A = manifest.label_space.num_actions();
    if (test_view < 0 || test_view >= V) {
        throw ConfigError("test_view " + std::to_string(test_view) + " out of range [0, " +
                          std::to_string(V) + ")");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must lie in (0, 1)");
    }

    std::vector<int64_t> per_view(V, 0);
    for (const auto& e : manifest.entries) ++per_view[e.view_id];
    if (per_view[test_view] == 0) {
        throw EmptyFoldError("test view '" + manifest.label_space.views[test_view] +
                             "' has no entries");
    }
    for (int v = 0; v < V; ++v) {
        if (per_view[v] == 0) {
            throw EmptyFoldError("view '" + manifest.label_space.views[v] + "' has no entries");
        }
    }

    LocoSplit split;
    split.test.label_space = manifest.label_space;
    split.test.origin = manifest.origin;

    DatasetManifest rest;
    rest.label_space = manifest.label_space;
    rest.origin = manifest.origin;
    for (const auto& e : manifest.entries) {
        (e.view_id == test_view ? split.test : rest).entries.push_back(e);
    }

    TrainValSplit tv = split_train_val(rest, val_fraction, seed);
    split.train = std::move(tv.train);
    split.val = std::move(tv.val);
    return split;
}

TrainValSplit split_train_val(const DatasetManifest& manifest, double val_fraction, uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must lie in (0, 1)");
    }
    const int V = manifest.label_space.num_views();
    const int A = manifest.label_space.num_actions();

    TrainValSplit split;
    split.train.label_space = split.val.label_space = manifest.label_space;
    split.train.origin = split.val.origin = manifest.origin;

    // One independent shuffle stream per (action, view) cell, so fold
    // contents do not depend on entry order across cells.
    std::vector<std::vector<int>> cells(static_cast<size_t>(A) * V);
    for (int idx = 0; idx < static_cast<int>(manifest.entries.size()); ++idx) {
        const auto& e = manifest.entries[idx];
        cells[static_cast<size_t>(e.action_id) * V + e.view_id].push_back(idx);
    }
    for (int a = 0; a < A; ++a) {
        for (int v = 0; v < V; ++v) {
            auto& cell = cells[static_cast<size_t>(a) * V + v];
            if (cell.empty()) continue;
            Rng rng(mix_seed(seed, (static_cast<uint64_t>(a) << 20) | static_cast<uint64_t>(v)));
            for (size_t i = cell.size() - 1; i > 0; --i) {
                const size_t j = rng.uniform_int(i + 1);
                std::swap(cell[i], cell[j]);
            }
            const auto n = static_cast<int64_t>(cell.size());
            auto n_val = static_cast<int64_t>(std::llround(val_fraction * static_cast<double>(n)));
            n_val = std::clamp<int64_t>(n_val, 0, n - 1);  // keep at least one train entry
            for (int64_t i = 0; i < n; ++i) {
                (i < n_val ? split.val : split.train).entries.push_back(manifest.entries[cell[i]]);
            }
        }
    }
    return split;
}

void export_png_dataset(const Dataset& dataset, const fs::path& out_root) {
    dataset.manifest.validate();
    const auto& labels = dataset.manifest.label_space;
    std::vector<int> per_cell_counter(
        static_cast<size_t>(labels.num_actions()) * labels.num_views(), 0);

    for (const auto& entry : dataset.manifest.entries) {
        const Image img = dataset.store->load(entry.source_id, 0);
        cv::Mat bgr(img.height, img.width, CV_8UC3);
        for (int y = 0; y < img.height; ++y) {
            auto* row = bgr.ptr<cv::Vec3b>(y);
            for (int x = 0; x < img.width; ++x) {
                for (int c = 0; c < 3; ++c) {
                    const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                    row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
                }
            }
        }
        const fs::path cell =
            out_root / labels.views[entry.view_id] / labels.actions[entry.action_id];
        std::error_code ec;
        fs::create_directories(cell, ec);
        if (ec) throw IoError("cannot create " + cell.string() + ": " + ec.message());
        int& counter =
            per_cell_counter[static_cast<size_t>(entry.action_id) * labels.num_views() +
                             entry.view_id];
        char leaf[16];
        std::snprintf(leaf, sizeof(leaf), "%05d.png", counter++);
        const fs::path out_path = cell / leaf;
        if (!cv::imwrite(out_path.string(), bgr)) {
            throw IoError("cannot write " + out_path.string());
        }
    }
}

}  // namespace dbmnet
