#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "mftsim/mlp.hpp"
#include "mftsim/param_vector.hpp"

namespace mft {

/// Checkpoint file: 8-byte magic, u64 header length, JSON header, u64
/// parameter count, raw little-endian float64 payload. Round-trips are
/// bit-exact.
struct CheckpointMeta {
    int schema_version = 1;
    MlpSpec model_spec;
    std::uint64_t seed = 0;
    std::string role;  // base | defended | attacked
    std::map<std::string, std::string> provenance;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamVector& theta);

std::pair<CheckpointMeta, ParamVector> load_checkpoint(const std::string& path);

} // namespace mft
