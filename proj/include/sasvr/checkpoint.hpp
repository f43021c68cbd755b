#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "sasvr/network.hpp"

namespace sasvr {

// File layout: "SASVRCK1", u32 version, u32 json length, json (model config,
// seed, metadata), u32 tensor count, then per tensor u32 name length, name,
// u32 rank, u32 dims, little-endian float32 values.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(SaSvrNet<float>& model, const nlohmann::json& metadata,
                     const std::filesystem::path& path);

// Rebuilds the model and restores every parameter and buffer. Throws IoError
// for unreadable files and InvalidArgument for tensors that do not match.
std::unique_ptr<SaSvrNet<float>> load_checkpoint(const std::filesystem::path& path,
                                                 Checkpoint* info = nullptr);

}  // namespace sasvr
