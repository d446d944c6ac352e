#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hgan/autodiff.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

/// Model shape and ablation switches. d0/d1 come from the dataset manifest;
/// everything else is configuration.
struct ModelConfig {
    std::size_t D = 64;           // shared space dimension
    std::size_t H = 8;            // attention heads (must divide D)
    std::size_t M = 2;            // MFAR layers
    std::size_t d_p = 32;         // positional-encoding dimension (even)
    std::size_t gru_hidden = 32;  // BiGRU hidden size per direction
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    bool use_global = true;   // GIE
    bool use_local = true;    // LIE
    bool enable_s1 = true;
    bool enable_s2 = true;
    bool mfa_only = false;    // uniform pooling; rearrangement neither used nor trained
    std::size_t d0 = 0;
    std::size_t d1 = 0;

    std::size_t head_dim() const { return D / H; }
    void validate() const;  // throws ConfigError on inconsistency
};

struct ProjectionParams {
    Tensor W_g, b_g;  // global image rows  (D x D0, D)
    Tensor W_l, b_l;  // region rows        (D x D0, D)
    Tensor W_s, b_s;  // token rows         (D x D1, D)
};

struct AttentionHeadParams {
    Tensor W_q, W_k, W_v;  // each d x D with d = D/H
};

struct AggregationLayerParams {
    std::vector<AttentionHeadParams> heads;
    Tensor W_o;  // D x D
    ad::BatchNormState bn;
};

struct GruParams {
    Tensor W_z, U_z, b_z;
    Tensor W_r, U_r, b_r;
    Tensor W_h, U_h, b_h;
};

struct RearrangeParams {
    GruParams fwd, bwd;
    Tensor mlp_w, mlp_b;  // 1 x 2*hidden, 1
};

struct MfarParams {
    std::vector<AggregationLayerParams> layers;
    RearrangeParams rearrange;
};

/// All learnable state. Image and text keep independent MFAR stacks.
struct ModelParams {
    ModelConfig config;
    ProjectionParams proj;
    MfarParams image, text;
};

/// Fresh parameters: weight matrices uniform in +-1/sqrt(fan_in), zero biases,
/// BN gamma 1 / beta 0 / running stats (0, 1).
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Tensor&)>;

// learnable tensors (includes BN gamma/beta), stable order
void for_each_param(ModelParams& p, const ParamVisitor& fn);
void for_each_param(const ModelParams& p, const ConstParamVisitor& fn);
// BN running stats: checkpointed but never optimized
void for_each_state(ModelParams& p, const ParamVisitor& fn);
void for_each_state(const ModelParams& p, const ConstParamVisitor& fn);

// --- graph-leaf views used by one forward/backward pass ---------------------

struct ProjectionVars {
    ad::Var W_g, b_g, W_l, b_l, W_s, b_s;
};

struct HeadVars {
    ad::Var W_q, W_k, W_v;
};

struct LayerVars {
    std::vector<HeadVars> heads;
    ad::Var W_o, gamma, beta;
    ad::BatchNormState* bn = nullptr;  // running stats live in ModelParams
};

struct RearrangeVars {
    ad::GruCellVars fwd, bwd;
    ad::Var mlp_w, mlp_b;
};

struct MfarVars {
    std::vector<LayerVars> layers;
    RearrangeVars rearrange;
};

/// Leaf bindings for one computation graph. `leaves` follows for_each_param
/// order so gradients can be read back against the parameter list.
struct ModelVars {
    ProjectionVars proj;
    MfarVars image, text;
    std::vector<std::pair<std::string, ad::Var>> leaves;
};

ModelVars bind_params(ModelParams& p);

} // namespace hgan
