#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hgan/params.hpp"
#include "hgan/train.hpp"

namespace hgan {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One reproducible run: model shape, training schedule, dataset paths.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string train_manifest;
    std::string val_manifest;  // optional; recall falls back to the train split
    std::string out_dir = "run";

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

} // namespace hgan
