#pragma once

#include <cstdint>
#include <vector>

#include "hgan/autodiff.hpp"
#include "hgan/params.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

enum class Modality { Image, Text };

/// Fully connected feature graph (self-loops included: every node neighbors
/// every node). For images, rows [0,m) are projected grid features and rows
/// [m,m+k) projected region features; for text all rows are projected tokens.
struct FeatureGraph {
    ad::Var nodes;  // N x D
    Modality modality = Modality::Image;
    std::size_t global_count = 0;  // m (0 for text)
    std::size_t local_count = 0;   // k (l for text)

    // retained for the similarity hierarchy; v_local only when use_local
    ad::Var v_local;  // V_L (text: unset)

    std::size_t node_count() const { return global_count + local_count; }
};

/// Optional row-validity mask for padded inputs; empty means all rows valid.
/// Invalid rows are dropped before the graph is built, so they contribute
/// nothing downstream (attention, pooling, statistics).
using RowMask = std::vector<std::uint8_t>;

FeatureGraph build_image_graph(const Tensor& global_grid, const Tensor& regions,
                               const RowMask& region_mask, const ProjectionVars& proj,
                               bool use_global, bool use_local);

FeatureGraph build_text_graph(const Tensor& tokens, const RowMask& token_mask,
                              const ProjectionVars& proj);

/// Eq-style element-product edge vector; diagnostic surface only, the
/// aggregation layers derive their own coefficients from node features.
Tensor edge_weight(const FeatureGraph& g, std::size_t i, std::size_t j);

} // namespace hgan
