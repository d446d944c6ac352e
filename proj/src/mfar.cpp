#include "hgan/mfar.hpp"

#include <cmath>

#include "hgan/error.hpp"

namespace hgan {

ad::Var attention_logits(ad::Var nodes, const HeadVars& head) {
    const std::size_t d = head.W_q.value().rows();
    ad::Var q = ad::matmul_nt(nodes, head.W_q);  // N x d
    ad::Var k = ad::matmul_nt(nodes, head.W_k);
    return ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
}

ad::Var attention_scores(ad::Var nodes, const HeadVars& head) {
    return ad::softmax_rows(attention_logits(nodes, head));
}

ad::Var aggregate_layer(ad::Var nodes, const LayerVars& layer, ad::Mode mode,
                        bool update_running) {
    std::vector<ad::Var> heads;
    heads.reserve(layer.heads.size());
    for (const HeadVars& h : layer.heads) {
        ad::Var alpha = attention_scores(nodes, h);
        ad::Var values = ad::matmul_nt(nodes, h.W_v);   // N x d
        heads.push_back(ad::matmul(alpha, values));     // N x d
    }
    ad::Var mixed = ad::matmul_nt(ad::concat_cols(heads), layer.W_o);  // N x D
    // activation inside, normalization outside
    return ad::batch_norm(ad::relu(mixed), layer.gamma, layer.beta, *layer.bn, mode,
                          update_running);
}

Tensor positional_encoding(std::size_t n, std::size_t d_p) {
    if (d_p == 0 || d_p % 2 != 0)
        throw ConfigError("positional encoding dimension must be even, got " +
                          std::to_string(d_p));
    Tensor p({n, d_p});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; 2 * j < d_p; ++j) {
            const double freq =
                std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(d_p));
            const double angle = static_cast<double>(i) / freq;
            p.at(i, 2 * j) = std::sin(angle);
            p.at(i, 2 * j + 1) = std::cos(angle);
        }
    }
    return p;
}

ad::Var rearrangement_coefficients(std::size_t n, const RearrangeVars& rp) {
    if (n == 0) throw ShapeError("rearrangement_coefficients: empty node set");
    const std::size_t d_p = rp.fwd.W_z.value().cols();
    const std::size_t hidden = rp.fwd.W_z.value().rows();
    const Tensor pe = positional_encoding(n, d_p);

    std::vector<ad::Var> inputs;
    inputs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor r({d_p});
        for (std::size_t c = 0; c < d_p; ++c) r[c] = pe.at(i, c);
        inputs.push_back(ad::Var::constant(std::move(r)));
    }

    ad::Var h_fwd = ad::Var::constant(Tensor({hidden}));
    ad::Var h_bwd = ad::Var::constant(Tensor({hidden}));
    std::vector<ad::Var> fwd(n), bwd(n);
    for (std::size_t i = 0; i < n; ++i) {
        h_fwd = ad::gru_cell(inputs[i], h_fwd, rp.fwd);
        fwd[i] = h_fwd;
    }
    for (std::size_t i = n; i-- > 0;) {
        h_bwd = ad::gru_cell(inputs[i], h_bwd, rp.bwd);
        bwd[i] = h_bwd;
    }

    std::vector<ad::Var> states;
    states.reserve(n);
    for (std::size_t i = 0; i < n; ++i) states.push_back(ad::concat_vecs({fwd[i], bwd[i]}));
    ad::Var scores = ad::affine(ad::stack_rows(states), rp.mlp_w, rp.mlp_b);  // N x 1
    return ad::softmax_vec(ad::reshape(scores, {n}));
}

ad::Var rearrange_pool(ad::Var nodes, ad::Var theta) { return ad::sort_pool(nodes, theta); }

ad::Var mfar_forward(const FeatureGraph& graph, const MfarVars& mfar, ad::Mode mode,
                     bool update_running, bool mfa_only) {
    ad::Var nodes = graph.nodes;
    for (const LayerVars& layer : mfar.layers)
        nodes = aggregate_layer(nodes, layer, mode, update_running);
    if (mfa_only) return ad::mean_rows(nodes);
    ad::Var theta = rearrangement_coefficients(nodes.value().rows(), mfar.rearrange);
    return rearrange_pool(nodes, theta);
}

} // namespace hgan
