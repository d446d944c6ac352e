#pragma once

#include <vector>

#include "hgan/align.hpp"
#include "hgan/autodiff.hpp"
#include "hgan/graph.hpp"
#include "hgan/mfar.hpp"
#include "hgan/params.hpp"

namespace hgan {

/// Per-image vectors entering the similarity hierarchy: row means of the
/// pre-aggregation matrices plus the pooled MFAR vector.
struct ImageEmbedding {
    ad::Var v_local_mean;    // mean of V_L rows (only when use_local)
    ad::Var v_unified_mean;  // mean of V_U rows
    ad::Var v;               // MFAR output
};

struct TextEmbedding {
    ad::Var t_tokens_mean;  // mean of T_S rows
    ad::Var t;              // MFAR output
};

ImageEmbedding embed_image(const Tensor& global_grid, const Tensor& regions,
                           const RowMask& region_mask, const ModelVars& vars,
                           const ModelConfig& cfg, ad::Mode mode, bool update_running);

TextEmbedding embed_text(const Tensor& tokens, const RowMask& token_mask,
                         const ModelVars& vars, const ModelConfig& cfg, ad::Mode mode,
                         bool update_running);

/// Sum of the enabled similarity levels for one (image, text) pair.
ad::Var pair_similarity(const ImageEmbedding& img, const TextEmbedding& txt,
                        const ModelConfig& cfg);

/// One (image, caption) training pair; masks mark valid rows when the raw
/// matrices are padded to a common batch size.
struct BatchSample {
    Tensor global, regions, tokens;
    RowMask region_mask, token_mask;
};

/// Embeds every sample, assembles the in-batch similarity matrix (diagonal =
/// matched pairs) and applies the hardest-negative loss.
ad::Var batch_loss(const std::vector<BatchSample>& batch, const ModelVars& vars,
                   const ModelConfig& cfg, const LossConfig& loss, ad::Mode mode,
                   bool update_running);

} // namespace hgan
