#include "dbmnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "dbmnet/errors.hpp"

namespace dbmnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'B', 'M', 'N', 'C', 'K', 'P', 'T'};

using Json = nlohmann::json;

void append(std::vector<char>& buf, const void* data, size_t len) {
    const char* p = static_cast<const char*>(data);
    buf.insert(buf.end(), p, p + len);
}

template <typename T>
void append_pod(std::vector<char>& buf, T value) {
    append(buf, &value, sizeof(T));
}

struct Reader {
    const char* p;
    const char* end;

    void read(void* out, size_t len) {
        if (p + len > end) throw ChecksumError("checkpoint truncated");
        std::memcpy(out, p, len);
        p += len;
    }
    template <typename T>
    T read_pod() {
        T v;
        read(&v, sizeof(T));
        return v;
    }
};

Json model_config_json(const ModelConfig& m) {
    return Json{{"input_size", m.input_size},
                {"feature_dim", m.feature_dim},
                {"num_actions", m.num_actions},
                {"num_views", m.num_views}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig m;
    m.input_size = j.at("input_size").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.num_actions = j.at("num_actions").get<int>();
    m.num_views = j.at("num_views").get<int>();
    return m;
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Json meta;
    meta["label_space"] = {{"actions", ckpt.label_space.actions}, {"views", ckpt.label_space.views}};
    meta["model"] = model_config_json(ckpt.model);
    meta["config"] = ckpt.config_snapshot;
    meta["epoch"] = ckpt.epoch;
    meta["val_top1"] = ckpt.val_top1;
    const std::string meta_str = meta.dump();

    std::vector<char> buf;
    append(buf, kMagic, sizeof(kMagic));
    append_pod<uint32_t>(buf, ckpt.format_version);
    append_pod<uint64_t>(buf, meta_str.size());
    append(buf, meta_str.data(), meta_str.size());

    struct Entry {
        std::string name;
        const Tensor<float>* tensor;
    };
    std::vector<Entry> entries;
    ckpt.params.for_each(
        [&entries](const char* name, const Tensor<float>& t) { entries.push_back({name, &t}); });

    append_pod<uint32_t>(buf, static_cast<uint32_t>(entries.size()));
    uint64_t offset = 0;
    for (const auto& e : entries) {
        append_pod<uint16_t>(buf, static_cast<uint16_t>(e.name.size()));
        append(buf, e.name.data(), e.name.size());
        append_pod<uint8_t>(buf, 0);  // element type 0 = float32
        append_pod<uint8_t>(buf, static_cast<uint8_t>(e.tensor->shape.size()));
        for (int64_t dim : e.tensor->shape) append_pod<int64_t>(buf, dim);
        append_pod<uint64_t>(buf, offset);
        append_pod<uint64_t>(buf, static_cast<uint64_t>(e.tensor->numel()));
        offset += static_cast<uint64_t>(e.tensor->numel()) * sizeof(float);
    }
    for (const auto& e : entries) {
        append(buf, e.tensor->data.data(), e.tensor->data.size() * sizeof(float));
    }
    append_pod<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("checkpoint not found: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t)) {
        throw ChecksumError("checkpoint truncated: " + path.string());
    }
    const size_t body = buf.size() - sizeof(uint64_t);
    uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + body, sizeof(uint64_t));
    if (fnv1a64(buf.data(), body) != stored_sum) {
        throw ChecksumError("checkpoint checksum mismatch: " + path.string());
    }

    Reader r{buf.data(), buf.data() + body};
    char magic[8];
    r.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ChecksumError("not a checkpoint file: " + path.string());
    }
    const auto version = r.read_pod<uint32_t>();
    if (version != kCheckpointFormatVersion) {
        throw VersionError("unsupported checkpoint format_version " + std::to_string(version));
    }

    const auto meta_len = r.read_pod<uint64_t>();
    std::string meta_str(meta_len, '\0');
    r.read(meta_str.data(), meta_len);
    Json meta;
    try {
        meta = Json::parse(meta_str);
    } catch (const Json::exception& e) {
        throw ChecksumError(std::string("checkpoint metadata corrupt: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.label_space.actions = meta.at("label_space").at("actions").get<std::vector<std::string>>();
    ckpt.label_space.views = meta.at("label_space").at("views").get<std::vector<std::string>>();
    ckpt.model = model_config_from_json(meta.at("model"));
    ckpt.config_snapshot = meta.at("config").get<std::map<std::string, std::string>>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.val_top1 = meta.at("val_top1").get<double>();

    struct DirEntry {
        std::string name;
        std::vector<int64_t> shape;
        uint64_t offset;
        uint64_t numel;
    };
    const auto n_arrays = r.read_pod<uint32_t>();
    std::vector<DirEntry> dir(n_arrays);
    for (auto& e : dir) {
        const auto name_len = r.read_pod<uint16_t>();
        e.name.resize(name_len);
        r.read(e.name.data(), name_len);
        const auto dtype = r.read_pod<uint8_t>();
        if (dtype != 0) throw VersionError("unsupported element type in checkpoint");
        const auto ndim = r.read_pod<uint8_t>();
        e.shape.resize(ndim);
        for (auto& dim : e.shape) dim = r.read_pod<int64_t>();
        e.offset = r.read_pod<uint64_t>();
        e.numel = r.read_pod<uint64_t>();
    }

    const char* payload = r.p;
    ckpt.params.for_each([&](const char* name, Tensor<float>& t) {
        const DirEntry* found = nullptr;
        for (const auto& e : dir) {
            if (e.name == name) {
                found = &e;
                break;
            }
        }
        if (!found) throw ChecksumError(std::string("checkpoint missing array: ") + name);
        t.shape = found->shape;
        t.data.resize(found->numel);
        const char* src = payload + found->offset;
        if (src + found->numel * sizeof(float) > buf.data() + body) {
            throw ChecksumError("checkpoint array out of bounds: " + found->name);
        }
        std::memcpy(t.data.data(), src, found->numel * sizeof(float));
    });
    return ckpt;
}

}  // namespace dbmnet
