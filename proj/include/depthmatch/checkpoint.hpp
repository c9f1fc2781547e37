#pragma once

// Binary checkpoint container. One file holds the model header, the full
// resolved config text and its hash, training counters, and named f32 blobs:
// student parameters under their plain names, teacher parameters under
// "teacher.", optimizer moments under "optim.m." / "optim.v.". Loading
// validates the magic, version, and every shape; resumption additionally
// requires an identical config hash.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "depthmatch/model.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

struct CheckpointData {
    std::uint32_t version = 1;
    ModelConfig model;
    std::string resolved_config;
    std::uint64_t config_hash = 0;
    std::int64_t epoch = 0;        // completed epochs
    std::int64_t global_step = 0;  // completed optimizer steps
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> blobs;

    void add_blob(const std::string& name, const Shape& shape, const std::vector<float>& data) {
        blobs.emplace_back(name, std::make_pair(shape, data));
    }
    const std::pair<Shape, std::vector<float>>* find(const std::string& name) const {
        for (const auto& [n, b] : blobs)
            if (n == name) return &b;
        return nullptr;
    }
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& d);
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies every "prefix<name>" blob into the store, validating shapes and
// requiring a blob for every parameter.
void load_params_from_blobs(const CheckpointData& d, const std::string& prefix,
                            ParamStore<float>& params);

}  // namespace dm
