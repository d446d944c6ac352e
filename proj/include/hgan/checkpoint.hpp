#pragma once

#include <filesystem>
#include <optional>

#include "hgan/params.hpp"
#include "hgan/train.hpp"

namespace hgan {

// Container: magic "HGK1" | u64 LE header length | JSON header | HGT8 blobs.
// Parameters are stored as 64-bit blobs so a save/load round-trip is exact.

struct Checkpoint {
    ModelParams params;
    TrainConfig train;
    std::optional<AdamState> adam;
    std::size_t step = 0;
    std::size_t epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const TrainConfig& train, const AdamState* adam, std::size_t step,
                     std::size_t epoch);

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace hgan
