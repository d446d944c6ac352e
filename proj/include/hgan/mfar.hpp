#pragma once

#include "hgan/autodiff.hpp"
#include "hgan/graph.hpp"
#include "hgan/params.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

/// Scaled dot-product logits for one head: e_ij = q_i . k_j / sqrt(d).
ad::Var attention_logits(ad::Var nodes, const HeadVars& head);

/// Row-softmax of the logits: the per-node aggregation weights.
ad::Var attention_scores(ad::Var nodes, const HeadVars& head);

/// One aggregation layer: multi-head attention over the fully connected
/// graph, head concat, output mix, then ReLU and node-axis batch norm.
ad::Var aggregate_layer(ad::Var nodes, const LayerVars& layer, ad::Mode mode,
                        bool update_running);

/// Interleaved sin/cos positional vectors, positions 0..n-1. d_p must be even.
Tensor positional_encoding(std::size_t n, std::size_t d_p);

/// theta = softmax(MLP(BiGRU(positional encodings))); length n, sums to 1,
/// depends only on n and the parameters, never on feature values.
ad::Var rearrangement_coefficients(std::size_t n, const RearrangeVars& rp);

/// Order-statistic pooling: per channel, theta-weighted sum over values
/// sorted descending.
ad::Var rearrange_pool(ad::Var nodes, ad::Var theta);

/// M aggregation layers followed by one pooling step. mfa_only swaps the
/// learned rearrangement for plain row-order averaging.
ad::Var mfar_forward(const FeatureGraph& graph, const MfarVars& mfar, ad::Mode mode,
                     bool update_running, bool mfa_only);

} // namespace hgan
