#pragma once

// Binary container for parameters and Fisher vectors: one line of UTF-8 JSON
// header, then the little-endian float64 payload.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ewclab/fisher.hpp"
#include "ewclab/model.hpp"

namespace ewclab {

inline constexpr int kCheckpointFormatVersion = 1;

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::uint64_t byte_offset = 0;
    std::uint64_t byte_length = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct FisherMeta {
    std::string task_label;
    std::size_t n_samples = 0;

    friend bool operator==(const FisherMeta&, const FisherMeta&) = default;
};

struct CheckpointContainer {
    int format_version = kCheckpointFormatVersion;
    ModelConfig model_config;
    std::vector<NamedTensor> tensors;
    std::optional<FisherMeta> fisher;

    // Offsets are contiguous in tensor order starting at 0.
    std::vector<ManifestEntry> manifest() const;
    friend bool operator==(const CheckpointContainer&, const CheckpointContainer&) = default;
};

std::string encode_container(const CheckpointContainer& c);
// Rejects malformed headers, overlapping or out-of-order offsets and payload
// size mismatches with ErrorKind::Io.
CheckpointContainer decode_container(std::string_view bytes);

void save_container(const CheckpointContainer& c, const std::filesystem::path& path);
CheckpointContainer load_container(const std::filesystem::path& path);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
// The manifest must match the layout of build_model(header config).
ModelParams load_checkpoint(const std::filesystem::path& path);

// Stored with the parameter layout of `config`, one tensor per parameter entry.
void save_fisher(const FisherVector& fisher, const ModelConfig& config, const std::filesystem::path& path);
FisherVector load_fisher(const std::filesystem::path& path);

} // namespace ewclab
