#include "hgan/model.hpp"

#include "hgan/error.hpp"

namespace hgan {

ImageEmbedding embed_image(const Tensor& global_grid, const Tensor& regions,
                           const RowMask& region_mask, const ModelVars& vars,
                           const ModelConfig& cfg, ad::Mode mode, bool update_running) {
    FeatureGraph g = build_image_graph(global_grid, regions, region_mask, vars.proj,
                                       cfg.use_global, cfg.use_local);
    ImageEmbedding e;
    if (cfg.use_local) e.v_local_mean = ad::mean_rows(g.v_local);
    e.v_unified_mean = ad::mean_rows(g.nodes);
    e.v = mfar_forward(g, vars.image, mode, update_running, cfg.mfa_only);
    return e;
}

TextEmbedding embed_text(const Tensor& tokens, const RowMask& token_mask,
                         const ModelVars& vars, const ModelConfig& cfg, ad::Mode mode,
                         bool update_running) {
    FeatureGraph g = build_text_graph(tokens, token_mask, vars.proj);
    TextEmbedding e;
    e.t_tokens_mean = ad::mean_rows(g.nodes);
    e.t = mfar_forward(g, vars.text, mode, update_running, cfg.mfa_only);
    return e;
}

ad::Var pair_similarity(const ImageEmbedding& img, const TextEmbedding& txt,
                        const ModelConfig& cfg) {
    ad::Var total = ad::cosine(img.v, txt.t);  // S3
    if (cfg.enable_s1) total = ad::add(total, ad::cosine(img.v_local_mean, txt.t_tokens_mean));
    if (cfg.enable_s2)
        total = ad::add(total, ad::cosine(img.v_unified_mean, txt.t_tokens_mean));
    return total;
}

ad::Var batch_loss(const std::vector<BatchSample>& batch, const ModelVars& vars,
                   const ModelConfig& cfg, const LossConfig& loss, ad::Mode mode,
                   bool update_running) {
    const std::size_t b = batch.size();
    if (b < 2) throw DataError("batch_loss: need at least 2 pairs, got " + std::to_string(b));

    std::vector<ImageEmbedding> images;
    std::vector<TextEmbedding> texts;
    images.reserve(b);
    texts.reserve(b);
    for (const BatchSample& s : batch) {
        images.push_back(
            embed_image(s.global, s.regions, s.region_mask, vars, cfg, mode, update_running));
        texts.push_back(
            embed_text(s.tokens, s.token_mask, vars, cfg, mode, update_running));
    }

    std::vector<ad::Var> entries;
    entries.reserve(b * b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            entries.push_back(pair_similarity(images[i], texts[j], cfg));
    ad::Var sim = ad::stack_scalars(entries, {b, b});
    return ad::triplet_loss(sim, loss.margin, loss.mean_reduce);
}

} // namespace hgan
