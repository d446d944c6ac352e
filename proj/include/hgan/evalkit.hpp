#pragma once

#include <string>
#include <vector>

#include "hgan/align.hpp"
#include "hgan/ingest.hpp"
#include "hgan/params.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

struct RecallReport {
    double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;  // percentages
    double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;
    double rsum = 0;
    std::vector<std::size_t> i2t_best_rank;  // per image: best rank over its captions
    std::vector<std::size_t> t2i_rank;       // per caption: rank of its image
};

/// Eval-mode embeddings for one split: unique images (deduplicated by caption
/// group, first-appearance order) and every caption.
struct EvalEmbeddings {
    std::vector<std::string> image_ids;      // caption_group_ids
    std::vector<std::string> text_ids;       // sample_ids
    std::vector<std::size_t> text_to_image;  // caption index -> image index
    std::vector<Tensor> img_v_local_mean;    // empty when use_local is off
    std::vector<Tensor> img_v_unified_mean;
    std::vector<Tensor> img_v;
    std::vector<Tensor> txt_tokens_mean;
    std::vector<Tensor> txt_t;
};

EvalEmbeddings embed_dataset(const Dataset& ds, ModelParams& params);

/// Pairwise hierarchical similarity; image embeddings are computed once and
/// reused across all captions.
Tensor similarity_matrix(const EvalEmbeddings& emb, const LevelFlags& flags);

/// Recall@{1,5,10} both ways plus Rsum. Ranks count strictly-greater entries,
/// ties broken toward the lower index, so results are exact and deterministic.
RecallReport recall_report(const Tensor& sim, const std::vector<std::size_t>& text_to_image);

/// Convenience: embed + similarity + report.
RecallReport evaluate(const Dataset& ds, ModelParams& params, const LevelFlags& flags);

/// 5-fold style evaluation over manifest-declared folds of caption groups.
struct FoldedReport {
    std::vector<RecallReport> per_fold;
    RecallReport averaged;  // mean of the six recalls; rank lists left empty
};
FoldedReport evaluate_folds(const Dataset& ds, ModelParams& params, const LevelFlags& flags);

/// Per-token match weights for one caption against one image: softmax over
/// the cosine of each projected token row with the image's MFAR vector.
std::vector<double> word_similarity(const Tensor& projected_tokens, const Tensor& image_v);

struct WordSimilarityRow {
    std::string sample_id;
    std::string caption_group_id;
    std::vector<double> weights;  // one per token, sums to 1
};
std::vector<WordSimilarityRow> word_similarity_export(const Dataset& ds, ModelParams& params);

} // namespace hgan
