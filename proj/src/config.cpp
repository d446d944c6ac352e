#include "hgan/config.hpp"

#include <fstream>

#include "hgan/error.hpp"

namespace hgan {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"D", c.D},
         {"H", c.H},
         {"M", c.M},
         {"d_p", c.d_p},
         {"gru_hidden", c.gru_hidden},
         {"bn_momentum", c.bn_momentum},
         {"bn_epsilon", c.bn_epsilon},
         {"use_global", c.use_global},
         {"use_local", c.use_local},
         {"enable_s1", c.enable_s1},
         {"enable_s2", c.enable_s2},
         {"mfa_only", c.mfa_only},
         {"D0", c.d0},
         {"D1", c.d1}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    c.D = j.value("D", c.D);
    c.H = j.value("H", c.H);
    c.M = j.value("M", c.M);
    c.d_p = j.value("d_p", c.d_p);
    c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
    c.use_global = j.value("use_global", c.use_global);
    c.use_local = j.value("use_local", c.use_local);
    c.enable_s1 = j.value("enable_s1", c.enable_s1);
    c.enable_s2 = j.value("enable_s2", c.enable_s2);
    c.mfa_only = j.value("mfa_only", c.mfa_only);
    c.d0 = j.value("D0", c.d0);
    c.d1 = j.value("D1", c.d1);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"base_lr", c.base_lr},
         {"lr_decay", c.lr_decay},
         {"lr_decay_every", c.lr_decay_every},
         {"warmup_fraction", c.warmup_fraction},
         {"margin", c.margin},
         {"grad_clip", c.grad_clip},
         {"mean_reduce", c.mean_reduce},
         {"seed", c.seed},
         {"stop_at_rsum", c.stop_at_rsum},
         {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.margin = j.value("margin", c.margin);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.mean_reduce = j.value("mean_reduce", c.mean_reduce);
    c.seed = j.value("seed", c.seed);
    c.stop_at_rsum = j.value("stop_at_rsum", c.stop_at_rsum);
    c.eval_every = j.value("eval_every", c.eval_every);
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (train_manifest.empty()) throw ConfigError("train_manifest is required");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model", c.model},
         {"train", c.train},
         {"data", {{"train_manifest", c.train_manifest}, {"val_manifest", c.val_manifest}}},
         {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    c = RunConfig{};
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.train_manifest = d.value("train_manifest", std::string{});
        c.val_manifest = d.value("val_manifest", std::string{});
    }
    c.out_dir = j.value("out_dir", c.out_dir);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        return j.get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

} // namespace hgan
