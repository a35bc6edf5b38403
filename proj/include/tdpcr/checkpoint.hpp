#pragma once

#include <map>
#include <string>

#include "tdpcr/network.hpp"

namespace tdpcr {

struct CheckpointMeta {
    int phase = 1;
    int64_t step = 0;
    uint64_t seed = 0;
    std::string freeze = "none";
};

// Single-archive checkpoint: fixed magic, JSON manifest (config echo, group
// names, parameter shapes, phase, step, seed), then raw little-endian f32
// buffers in manifest order. "extras" carries optimizer state for resume.
void save_checkpoint(const std::string& path, const TdpcrNetwork<float>& net, const CheckpointMeta& meta,
                     const std::map<std::string, Tensor<float>>& extras = {});

struct CheckpointInfo {
    CheckpointMeta meta;
    NetworkConfig config;
};

// Loads parameters into an existing network; every parameter is matched by
// name and validated shape-exact in both directions.
CheckpointInfo load_checkpoint(const std::string& path, TdpcrNetwork<float>& net,
                               std::map<std::string, Tensor<float>>* extras = nullptr);

// Reads just the manifest (to rebuild a network before loading).
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace tdpcr
