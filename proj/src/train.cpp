#include "hgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hgan/autodiff.hpp"
#include "hgan/checkpoint.hpp"
#include "hgan/error.hpp"
#include "hgan/evalkit.hpp"
#include "hgan/model.hpp"
#include "hgan/rng.hpp"

namespace hgan {

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (loss needs negatives)");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("lr_decay must lie in (0,1]");
    if (lr_decay_every == 0) throw ConfigError("lr_decay_every must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw ConfigError("warmup_fraction must lie in [0,1)");
    if (margin < 0.0) throw ConfigError("margin must be >= 0");
    if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t epoch,
             const TrainConfig& cfg) {
    const auto warmup_steps = static_cast<std::size_t>(
        cfg.warmup_fraction * static_cast<double>(total_steps));
    if (step < warmup_steps)
        return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double decays = std::floor(static_cast<double>(epoch / cfg.lr_decay_every));
    return cfg.base_lr * std::pow(cfg.lr_decay, decays);
}

AdamState::AdamState(const std::vector<ParamRef>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const ParamRef& p : params) {
        m_.push_back(Tensor::zeros_like(*p.tensor));
        v_.push_back(Tensor::zeros_like(*p.tensor));
    }
}

void AdamState::step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
                     double lr, const AdamConfig& cfg) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ShapeError("adam: parameter/gradient count mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Tensor& g = grads[p];
        if (!g.all_finite()) {
            --step_;
            throw DataError("adam: non-finite gradient for " + params[p].name +
                            " (norm=" + std::to_string(tnorm(g)) + ")");
        }
        Tensor& theta = *params[p].tensor;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m_[p][i] = cfg.beta1 * m_[p][i] + (1.0 - cfg.beta1) * g[i];
            v_[p][i] = cfg.beta2 * v_[p][i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m_[p][i] / bc1;
            const double vhat = v_[p][i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

std::vector<ParamRef> param_refs(ModelParams& p) {
    std::vector<ParamRef> refs;
    for_each_param(p, [&](const std::string& name, Tensor& t) { refs.push_back({name, &t}); });
    return refs;
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Tensor& g : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
    return norm;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// pads regions/tokens to the batch maxima; masks mark the real rows
BatchSample collate(const LoadedSample& s, std::size_t k_max, std::size_t l_max) {
    BatchSample b;
    b.global = s.global;
    const std::size_t k = s.regions.rows(), l = s.tokens.rows();
    if (k == k_max) {
        b.regions = s.regions;
    } else {
        b.regions = Tensor({k_max, s.regions.cols()});
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < s.regions.cols(); ++c)
                b.regions.at(r, c) = s.regions.at(r, c);
        b.region_mask.assign(k_max, 0);
        std::fill(b.region_mask.begin(), b.region_mask.begin() + static_cast<long>(k), 1);
    }
    if (l == l_max) {
        b.tokens = s.tokens;
    } else {
        b.tokens = Tensor({l_max, s.tokens.cols()});
        for (std::size_t r = 0; r < l; ++r)
            for (std::size_t c = 0; c < s.tokens.cols(); ++c)
                b.tokens.at(r, c) = s.tokens.at(r, c);
        b.token_mask.assign(l_max, 0);
        std::fill(b.token_mask.begin(), b.token_mask.begin() + static_cast<long>(l), 1);
    }
    return b;
}

} // namespace

TrainResult train(const Dataset& train_ds, const Dataset* eval_ds, ModelConfig model_cfg,
                  const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    model_cfg.d0 = train_ds.manifest.d0;
    model_cfg.d1 = train_ds.manifest.d1;
    model_cfg.validate();
    if (train_ds.group_ids.size() < cfg.batch_size && train_ds.group_ids.size() < 2)
        throw ConfigError("training split has fewer than 2 caption groups");

    const Dataset& rsum_ds = eval_ds ? *eval_ds : train_ds;
    const LevelFlags flags{model_cfg.enable_s1, model_cfg.enable_s2};
    const LossConfig loss_cfg{cfg.margin, cfg.mean_reduce};

    TrainResult result;
    result.params = init_params(model_cfg, cfg.seed);
    std::vector<ParamRef> refs = param_refs(result.params);
    AdamState adam(refs);
    Rng data_rng(cfg.seed + 0x5eed);

    const std::size_t n_groups = train_ds.group_ids.size();
    // one caption per image per epoch; a trailing batch of 1 has no negatives
    std::size_t steps_per_epoch = n_groups / cfg.batch_size;
    const std::size_t rem = n_groups % cfg.batch_size;
    if (rem >= 2) ++steps_per_epoch;
    if (steps_per_epoch == 0 && n_groups >= 2) steps_per_epoch = 1;
    if (steps_per_epoch == 0) throw ConfigError("not enough samples for one batch");
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    std::ofstream metrics;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        metrics.open(opts.out_dir / "metrics.csv", std::ios::trunc);
        // timestamp lives only on this header line; everything below is
        // reproducible from (config, seed)
        const std::time_t now = std::time(nullptr);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        metrics << "# generated " << stamp << "\n";
        metrics << "step,epoch,lr,loss,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum\n";
    }

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // sample one caption per group, then shuffle the pair order
        std::vector<std::size_t> picked;
        picked.reserve(n_groups);
        for (const std::string& gid : train_ds.group_ids) {
            const auto& members = train_ds.group_samples.at(gid);
            picked.push_back(members[data_rng.index(members.size())]);
        }
        data_rng.shuffle(picked);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 2 <= picked.size();
             start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, picked.size() - start);
            if (count < 2) break;

            std::size_t k_max = 0, l_max = 0;
            for (std::size_t i = 0; i < count; ++i) {
                const LoadedSample& s = train_ds.samples[picked[start + i]];
                k_max = std::max(k_max, s.regions.rows());
                l_max = std::max(l_max, s.tokens.rows());
            }
            std::vector<BatchSample> batch;
            batch.reserve(count);
            for (std::size_t i = 0; i < count; ++i)
                batch.push_back(collate(train_ds.samples[picked[start + i]], k_max, l_max));

            const double lr = lr_at(global_step, total_steps, epoch, cfg);
            ModelVars vars = bind_params(result.params);
            ad::Var loss =
                batch_loss(batch, vars, model_cfg, loss_cfg, ad::Mode::Train, true);
            const double loss_value = ad::backward(loss);
            if (!std::isfinite(loss_value))
                throw DataError("non-finite loss at step " + std::to_string(global_step));

            std::vector<Tensor> grads;
            grads.reserve(vars.leaves.size());
            for (const auto& [name, leaf] : vars.leaves) grads.push_back(leaf.grad());
            clip_gradients(grads, cfg.grad_clip);
            adam.step(refs, grads, lr);

            loss_sum += loss_value;
            ++batches;
            ++global_step;
            if (metrics.is_open())
                metrics << global_step << ',' << epoch << ',' << fmt_double(lr) << ','
                        << fmt_double(loss_value) << ",,,,,,,\n";
        }

        EpochLog log;
        log.epoch = epoch;
        log.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;

        const bool last_epoch = epoch + 1 == cfg.epochs;
        if ((epoch + 1) % cfg.eval_every == 0 || last_epoch) {
            RecallReport rep = evaluate(rsum_ds, result.params, flags);
            log.rsum = rep.rsum;
            result.final_rsum = rep.rsum;
            if (metrics.is_open())
                metrics << global_step << ',' << epoch << ",," << ','
                        << fmt_double(rep.i2t_r1) << ',' << fmt_double(rep.i2t_r5) << ','
                        << fmt_double(rep.i2t_r10) << ',' << fmt_double(rep.t2i_r1) << ','
                        << fmt_double(rep.t2i_r5) << ',' << fmt_double(rep.t2i_r10) << ','
                        << fmt_double(rep.rsum) << "\n";
        }

        if (!opts.out_dir.empty()) {
            result.last_checkpoint = opts.out_dir / "checkpoint_last.hgck";
            save_checkpoint(result.last_checkpoint, result.params, cfg, &adam, global_step,
                            epoch);
        }
        result.epochs.push_back(log);
        if (opts.on_epoch) opts.on_epoch(log);
        result.steps_run = global_step;
        if (cfg.stop_at_rsum > 0.0 && log.rsum >= cfg.stop_at_rsum) break;
    }
    return result;
}

} // namespace hgan
