#include "hgan/graph.hpp"

#include "hgan/error.hpp"

namespace hgan {

namespace {

// keep only mask-valid rows, preserving order
ad::Var compact_rows(ad::Var x, const RowMask& mask) {
    if (mask.empty()) return x;
    if (mask.size() != x.value().rows())
        throw ShapeError("row mask length " + std::to_string(mask.size()) +
                         " does not match rows " + std::to_string(x.value().rows()));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) keep.push_back(i);
    if (keep.empty()) throw DataError("row mask leaves no valid rows");
    if (keep.size() == mask.size()) return x;
    return ad::gather_rows(x, keep);
}

} // namespace

FeatureGraph build_image_graph(const Tensor& global_grid, const Tensor& regions,
                               const RowMask& region_mask, const ProjectionVars& proj,
                               bool use_global, bool use_local) {
    if (!use_global && !use_local)
        throw ConfigError("image graph needs at least one of global/local features");

    FeatureGraph g;
    g.modality = Modality::Image;

    std::vector<ad::Var> parts;
    if (use_global) {
        ad::Var v_g = ad::affine(ad::Var::constant(global_grid), proj.W_g, proj.b_g);
        g.global_count = v_g.value().rows();
        parts.push_back(v_g);
    }
    if (use_local) {
        ad::Var raw = compact_rows(ad::Var::constant(regions), region_mask);
        g.v_local = ad::affine(raw, proj.W_l, proj.b_l);
        g.local_count = g.v_local.value().rows();
        parts.push_back(g.v_local);
    }
    g.nodes = ad::concat_rows(parts);
    return g;
}

FeatureGraph build_text_graph(const Tensor& tokens, const RowMask& token_mask,
                              const ProjectionVars& proj) {
    FeatureGraph g;
    g.modality = Modality::Text;
    ad::Var raw = compact_rows(ad::Var::constant(tokens), token_mask);
    g.nodes = ad::affine(raw, proj.W_s, proj.b_s);
    g.local_count = g.nodes.value().rows();
    return g;
}

Tensor edge_weight(const FeatureGraph& g, std::size_t i, std::size_t j) {
    const Tensor& nodes = g.nodes.value();
    if (i >= nodes.rows() || j >= nodes.rows())
        throw ShapeError("edge_weight: node index out of range");
    Tensor e({nodes.cols()});
    for (std::size_t c = 0; c < nodes.cols(); ++c) e[c] = nodes.at(i, c) * nodes.at(j, c);
    return e;
}

} // namespace hgan
