#pragma once

#include "hgan/tensor.hpp"

namespace hgan {

struct LevelFlags {
    bool s1 = true;
    bool s2 = true;
    // S3 is the backbone of the model and cannot be disabled
};

struct SimilarityBreakdown {
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    double total = 0.0;
    bool has_s1 = false, has_s2 = false;
};

/// Plain cosine; throws DataError on a zero-norm input.
double cosine(const Tensor& u, const Tensor& v);

/// Three-level similarity. S1 and S2 compare the row means of the pre-MFAR
/// matrices against the row mean of the projected tokens; S3 compares the
/// pooled MFAR vectors. total sums the enabled levels.
SimilarityBreakdown hierarchical_similarity(const Tensor& v_local, const Tensor& v_unified,
                                            const Tensor& v, const Tensor& t_tokens,
                                            const Tensor& t, const LevelFlags& flags);

struct LossConfig {
    double margin = 0.2;
    bool mean_reduce = false;  // default: sum over the batch
};

/// Bidirectional hardest-negative hinge loss on a square similarity matrix
/// (diagonal = matched pairs); value-only counterpart of the graph op.
double triplet_loss_value(const Tensor& sim, const LossConfig& cfg);

Tensor mean_rows_value(const Tensor& x);

} // namespace hgan
