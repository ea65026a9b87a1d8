#pragma once

// Checkpoint file: 8-byte magic "BABYITCK", uint32 format version, uint64
// header length, a JSON header (model config, tensor table, provenance),
// then every tensor as little-endian float32 in header order.

#include <filesystem>

#include "babyit/common.hpp"
#include "babyit/model.hpp"

namespace babyit::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

void save(const std::filesystem::path& path, const Model& model, const Json& provenance = Json::object());

struct Loaded {
    Model model;
    Json provenance;
};

Loaded load(const std::filesystem::path& path);

}  // namespace babyit::checkpoint
