#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hgan/gradcheck.hpp"
#include "hgan/ingest.hpp"
#include "hgan/params.hpp"

namespace hgan {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;     // >= 2, the loss needs in-batch negatives
    double base_lr = 2e-4;
    double lr_decay = 0.1;
    std::size_t lr_decay_every = 6;  // epochs
    double warmup_fraction = 0.1;    // of total steps, linear ramp from 0
    double margin = 0.2;
    double grad_clip = 2.0;          // global norm; <= 0 disables
    bool mean_reduce = false;
    std::uint64_t seed = 1;
    double stop_at_rsum = 0.0;       // > 0: stop once the eval split reaches it
    std::size_t eval_every = 1;      // epochs between recall evaluations

    void validate() const;
};

/// Linear warmup to base_lr over the first warmup_fraction of all steps, then
/// base_lr * lr_decay^floor(epoch / lr_decay_every).
double lr_at(std::size_t step, std::size_t total_steps, std::size_t epoch,
             const TrainConfig& cfg);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const std::vector<ParamRef>& params);

    /// Bias-corrected update in place; throws DataError on a non-finite
    /// gradient, naming the parameter and its norm.
    void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
              double lr, const AdamConfig& cfg = {});

    std::int64_t step_count() const { return step_; }

    // checkpoint access
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    std::vector<Tensor> m_, v_;
    std::int64_t step_ = 0;
};

std::vector<ParamRef> param_refs(ModelParams& p);

/// Scales grads to a global norm of at most `max_norm`; returns the pre-clip
/// norm. No-op when max_norm <= 0.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double rsum = -1.0;  // -1 when no evaluation ran this epoch
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> epochs;
    std::size_t steps_run = 0;
    double final_rsum = -1.0;
    std::filesystem::path last_checkpoint;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // empty: no checkpoints / metrics files
    std::function<void(const EpochLog&)> on_epoch;
};

/// Full loop: seeded caption sampling and shuffling, padded batch collation,
/// forward/backward, Adam, per-epoch recall on `eval_ds` (train split when
/// null), checkpoints and a metrics CSV under out_dir.
TrainResult train(const Dataset& train_ds, const Dataset* eval_ds, ModelConfig model_cfg,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

} // namespace hgan
