#include "hgan/params.hpp"

#include <cmath>

#include "hgan/error.hpp"
#include "hgan/rng.hpp"

namespace hgan {

void ModelConfig::validate() const {
    if (D == 0 || H == 0 || D % H != 0)
        throw ConfigError("H (" + std::to_string(H) + ") must divide D (" + std::to_string(D) +
                          ")");
    if (M == 0) throw ConfigError("M must be >= 1");
    if (d_p == 0 || d_p % 2 != 0)
        throw ConfigError("d_p must be a positive even number, got " + std::to_string(d_p));
    if (gru_hidden == 0) throw ConfigError("gru_hidden must be >= 1");
    if (!use_global && !use_local)
        throw ConfigError("at least one of use_global/use_local must be enabled");
    if (enable_s1 && !use_local)
        throw ConfigError("S1 compares local image features; it requires use_local");
    if (bn_momentum <= 0.0 || bn_momentum >= 1.0)
        throw ConfigError("bn_momentum must lie in (0,1)");
    if (bn_epsilon <= 0.0) throw ConfigError("bn_epsilon must be positive");
}

namespace {

Tensor init_linear(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

GruParams init_gru(std::size_t input, std::size_t hidden, Rng& rng) {
    GruParams g;
    g.W_z = init_linear(hidden, input, rng);
    g.U_z = init_linear(hidden, hidden, rng);
    g.b_z = Tensor({hidden});
    g.W_r = init_linear(hidden, input, rng);
    g.U_r = init_linear(hidden, hidden, rng);
    g.b_r = Tensor({hidden});
    g.W_h = init_linear(hidden, input, rng);
    g.U_h = init_linear(hidden, hidden, rng);
    g.b_h = Tensor({hidden});
    return g;
}

MfarParams init_mfar(const ModelConfig& cfg, Rng& rng) {
    MfarParams m;
    const std::size_t d = cfg.head_dim();
    for (std::size_t layer = 0; layer < cfg.M; ++layer) {
        AggregationLayerParams lp;
        for (std::size_t h = 0; h < cfg.H; ++h) {
            AttentionHeadParams hp;
            hp.W_q = init_linear(d, cfg.D, rng);
            hp.W_k = init_linear(d, cfg.D, rng);
            hp.W_v = init_linear(d, cfg.D, rng);
            lp.heads.push_back(std::move(hp));
        }
        lp.W_o = init_linear(cfg.D, cfg.D, rng);
        lp.bn = ad::BatchNormState::init(cfg.D, cfg.bn_momentum, cfg.bn_epsilon);
        m.layers.push_back(std::move(lp));
    }
    m.rearrange.fwd = init_gru(cfg.d_p, cfg.gru_hidden, rng);
    m.rearrange.bwd = init_gru(cfg.d_p, cfg.gru_hidden, rng);
    m.rearrange.mlp_w = init_linear(1, 2 * cfg.gru_hidden, rng);
    m.rearrange.mlp_b = Tensor({1});
    return m;
}

template <typename Params, typename Fn>
void visit_gru(const std::string& prefix, Params& g, const Fn& fn) {
    fn(prefix + ".W_z", g.W_z);
    fn(prefix + ".U_z", g.U_z);
    fn(prefix + ".b_z", g.b_z);
    fn(prefix + ".W_r", g.W_r);
    fn(prefix + ".U_r", g.U_r);
    fn(prefix + ".b_r", g.b_r);
    fn(prefix + ".W_h", g.W_h);
    fn(prefix + ".U_h", g.U_h);
    fn(prefix + ".b_h", g.b_h);
}

template <typename Params, typename Fn>
void visit_mfar(const std::string& prefix, Params& m, const Fn& fn) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        auto& layer = m.layers[l];
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const std::string hp = lp + ".head" + std::to_string(h);
            fn(hp + ".W_q", layer.heads[h].W_q);
            fn(hp + ".W_k", layer.heads[h].W_k);
            fn(hp + ".W_v", layer.heads[h].W_v);
        }
        fn(lp + ".W_o", layer.W_o);
        fn(lp + ".bn.gamma", layer.bn.gamma);
        fn(lp + ".bn.beta", layer.bn.beta);
    }
    visit_gru(prefix + ".rearrange.fwd", m.rearrange.fwd, fn);
    visit_gru(prefix + ".rearrange.bwd", m.rearrange.bwd, fn);
    fn(prefix + ".rearrange.mlp_w", m.rearrange.mlp_w);
    fn(prefix + ".rearrange.mlp_b", m.rearrange.mlp_b);
}

template <typename Params, typename Fn>
void visit_params(Params& p, const Fn& fn) {
    fn("proj.W_g", p.proj.W_g);
    fn("proj.b_g", p.proj.b_g);
    fn("proj.W_l", p.proj.W_l);
    fn("proj.b_l", p.proj.b_l);
    fn("proj.W_s", p.proj.W_s);
    fn("proj.b_s", p.proj.b_s);
    visit_mfar("image", p.image, fn);
    visit_mfar("text", p.text, fn);
}

template <typename Params, typename Fn>
void visit_states(Params& p, const Fn& fn) {
    for (std::size_t l = 0; l < p.image.layers.size(); ++l) {
        fn("image.layer" + std::to_string(l) + ".bn.running_mean",
           p.image.layers[l].bn.running_mean);
        fn("image.layer" + std::to_string(l) + ".bn.running_var",
           p.image.layers[l].bn.running_var);
    }
    for (std::size_t l = 0; l < p.text.layers.size(); ++l) {
        fn("text.layer" + std::to_string(l) + ".bn.running_mean",
           p.text.layers[l].bn.running_mean);
        fn("text.layer" + std::to_string(l) + ".bn.running_var",
           p.text.layers[l].bn.running_var);
    }
}

} // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.d0 == 0 || cfg.d1 == 0) throw ConfigError("init_params: d0/d1 not set");
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    p.proj.W_g = init_linear(cfg.D, cfg.d0, rng);
    p.proj.b_g = Tensor({cfg.D});
    p.proj.W_l = init_linear(cfg.D, cfg.d0, rng);
    p.proj.b_l = Tensor({cfg.D});
    p.proj.W_s = init_linear(cfg.D, cfg.d1, rng);
    p.proj.b_s = Tensor({cfg.D});
    p.image = init_mfar(cfg, rng);
    p.text = init_mfar(cfg, rng);
    return p;
}

void for_each_param(ModelParams& p, const ParamVisitor& fn) { visit_params(p, fn); }
void for_each_param(const ModelParams& p, const ConstParamVisitor& fn) { visit_params(p, fn); }
void for_each_state(ModelParams& p, const ParamVisitor& fn) { visit_states(p, fn); }
void for_each_state(const ModelParams& p, const ConstParamVisitor& fn) { visit_states(p, fn); }

ModelVars bind_params(ModelParams& p) {
    ModelVars v;
    std::vector<ad::Var*> slots;

    // mirror the for_each_param traversal so `leaves` lines up with it
    auto bind_gru = [&](ad::GruCellVars& g) {
        slots.push_back(&g.W_z);
        slots.push_back(&g.U_z);
        slots.push_back(&g.b_z);
        slots.push_back(&g.W_r);
        slots.push_back(&g.U_r);
        slots.push_back(&g.b_r);
        slots.push_back(&g.W_h);
        slots.push_back(&g.U_h);
        slots.push_back(&g.b_h);
    };
    auto bind_mfar = [&](MfarParams& m, MfarVars& mv) {
        mv.layers.resize(m.layers.size());
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            mv.layers[l].heads.resize(m.layers[l].heads.size());
            for (std::size_t h = 0; h < m.layers[l].heads.size(); ++h) {
                slots.push_back(&mv.layers[l].heads[h].W_q);
                slots.push_back(&mv.layers[l].heads[h].W_k);
                slots.push_back(&mv.layers[l].heads[h].W_v);
            }
            slots.push_back(&mv.layers[l].W_o);
            slots.push_back(&mv.layers[l].gamma);
            slots.push_back(&mv.layers[l].beta);
            mv.layers[l].bn = &m.layers[l].bn;
        }
        bind_gru(mv.rearrange.fwd);
        bind_gru(mv.rearrange.bwd);
        slots.push_back(&mv.rearrange.mlp_w);
        slots.push_back(&mv.rearrange.mlp_b);
    };

    slots.push_back(&v.proj.W_g);
    slots.push_back(&v.proj.b_g);
    slots.push_back(&v.proj.W_l);
    slots.push_back(&v.proj.b_l);
    slots.push_back(&v.proj.W_s);
    slots.push_back(&v.proj.b_s);
    bind_mfar(p.image, v.image);
    bind_mfar(p.text, v.text);

    std::size_t next = 0;
    for_each_param(p, [&](const std::string& name, Tensor& t) {
        ad::Var leaf = ad::Var::leaf(t);
        *slots[next++] = leaf;
        v.leaves.emplace_back(name, leaf);
    });
    return v;
}

} // namespace hgan
