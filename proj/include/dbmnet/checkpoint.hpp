#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dbmnet/dataset.hpp"
#include "dbmnet/model.hpp"

namespace dbmnet {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    uint32_t format_version = kCheckpointFormatVersion;
    LabelSpace label_space;
    ModelConfig model;
    std::map<std::string, std::string> config_snapshot;
    ModelParams<float> params;
    int epoch = -1;
    double val_top1 = 0.0;
};

// Fixed-layout binary: magic, format version, metadata block, an array
// directory of (name, element type, shape, byte offset), raw little-endian
// IEEE-754 payloads, and a trailing 64-bit FNV-1a checksum over everything
// before it. Round-trips bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws NotFoundError, ChecksumError (corrupt/truncated), or VersionError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace dbmnet
