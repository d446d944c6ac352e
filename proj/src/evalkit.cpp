#include "hgan/evalkit.hpp"

#include <algorithm>
#include <cmath>

#include "hgan/error.hpp"
#include "hgan/model.hpp"

namespace hgan {

EvalEmbeddings embed_dataset(const Dataset& ds, ModelParams& params) {
    const ModelConfig& cfg = params.config;
    ModelVars vars = bind_params(params);

    EvalEmbeddings out;
    out.image_ids = ds.group_ids;
    for (std::size_t g = 0; g < ds.group_ids.size(); ++g) {
        const LoadedSample& rep = ds.samples[ds.group_representative[g]];
        ImageEmbedding e =
            embed_image(rep.global, rep.regions, {}, vars, cfg, ad::Mode::Eval, false);
        if (cfg.use_local) out.img_v_local_mean.push_back(e.v_local_mean.value());
        out.img_v_unified_mean.push_back(e.v_unified_mean.value());
        out.img_v.push_back(e.v.value());
    }
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        TextEmbedding e =
            embed_text(ds.samples[s].tokens, {}, vars, cfg, ad::Mode::Eval, false);
        out.text_ids.push_back(ds.samples[s].sample_id);
        out.text_to_image.push_back(ds.sample_group[s]);
        out.txt_tokens_mean.push_back(e.t_tokens_mean.value());
        out.txt_t.push_back(e.t.value());
    }
    return out;
}

Tensor similarity_matrix(const EvalEmbeddings& emb, const LevelFlags& flags) {
    const std::size_t ni = emb.img_v.size(), nt = emb.txt_t.size();
    if (flags.s1 && emb.img_v_local_mean.empty())
        throw ConfigError("S1 requested but local image embeddings are absent");
    Tensor s({ni, nt});
    for (std::size_t a = 0; a < ni; ++a) {
        for (std::size_t b = 0; b < nt; ++b) {
            double total = cosine(emb.img_v[a], emb.txt_t[b]);
            if (flags.s1)
                total += cosine(emb.img_v_local_mean[a], emb.txt_tokens_mean[b]);
            if (flags.s2)
                total += cosine(emb.img_v_unified_mean[a], emb.txt_tokens_mean[b]);
            s.at(a, b) = total;
        }
    }
    return s;
}

namespace {

// 1-based rank of entry `pos` within `values`; ties rank the lower index first
std::size_t rank_of(const std::vector<double>& values, std::size_t pos) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (j == pos) continue;
        if (values[j] > values[pos] || (values[j] == values[pos] && j < pos)) ++rank;
    }
    return rank;
}

double pct(std::size_t hits, std::size_t total) {
    return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace

RecallReport recall_report(const Tensor& sim, const std::vector<std::size_t>& text_to_image) {
    const std::size_t ni = sim.rows(), nt = sim.cols();
    if (text_to_image.size() != nt)
        throw DataError("recall_report: caption/group map size mismatch");

    std::vector<std::vector<std::size_t>> captions_of(ni);
    for (std::size_t b = 0; b < nt; ++b) {
        if (text_to_image[b] >= ni)
            throw DataError("recall_report: caption " + std::to_string(b) +
                            " maps to no image");
        captions_of[text_to_image[b]].push_back(b);
    }

    RecallReport rep;
    std::size_t hits1 = 0, hits5 = 0, hits10 = 0;
    std::vector<double> row(nt);
    for (std::size_t a = 0; a < ni; ++a) {
        if (captions_of[a].empty())
            throw DataError("recall_report: image " + std::to_string(a) + " has no captions");
        for (std::size_t b = 0; b < nt; ++b) row[b] = sim.at(a, b);
        std::size_t best = nt + 1;
        for (std::size_t b : captions_of[a]) best = std::min(best, rank_of(row, b));
        rep.i2t_best_rank.push_back(best);
        hits1 += best <= 1;
        hits5 += best <= 5;
        hits10 += best <= 10;
    }
    rep.i2t_r1 = pct(hits1, ni);
    rep.i2t_r5 = pct(hits5, ni);
    rep.i2t_r10 = pct(hits10, ni);

    hits1 = hits5 = hits10 = 0;
    std::vector<double> col(ni);
    for (std::size_t b = 0; b < nt; ++b) {
        for (std::size_t a = 0; a < ni; ++a) col[a] = sim.at(a, b);
        const std::size_t r = rank_of(col, text_to_image[b]);
        rep.t2i_rank.push_back(r);
        hits1 += r <= 1;
        hits5 += r <= 5;
        hits10 += r <= 10;
    }
    rep.t2i_r1 = pct(hits1, nt);
    rep.t2i_r5 = pct(hits5, nt);
    rep.t2i_r10 = pct(hits10, nt);

    rep.rsum = rep.i2t_r1 + rep.i2t_r5 + rep.i2t_r10 + rep.t2i_r1 + rep.t2i_r5 + rep.t2i_r10;
    return rep;
}

RecallReport evaluate(const Dataset& ds, ModelParams& params, const LevelFlags& flags) {
    EvalEmbeddings emb = embed_dataset(ds, params);
    return recall_report(similarity_matrix(emb, flags), emb.text_to_image);
}

FoldedReport evaluate_folds(const Dataset& ds, ModelParams& params, const LevelFlags& flags) {
    if (ds.manifest.folds.empty())
        throw DataError("manifest declares no folds; cannot run folded evaluation");

    EvalEmbeddings emb = embed_dataset(ds, params);
    std::map<std::string, std::size_t> image_index;
    for (std::size_t g = 0; g < emb.image_ids.size(); ++g)
        image_index[emb.image_ids[g]] = g;

    FoldedReport out;
    for (const auto& fold : ds.manifest.folds) {
        std::vector<std::size_t> img_idx;
        std::vector<std::size_t> img_pos(emb.image_ids.size(), SIZE_MAX);
        for (const std::string& gid : fold) {
            auto it = image_index.find(gid);
            if (it == image_index.end())
                throw DataError("fold references unknown caption group " + gid);
            img_pos[it->second] = img_idx.size();
            img_idx.push_back(it->second);
        }
        std::vector<std::size_t> txt_idx, txt_map;
        for (std::size_t b = 0; b < emb.text_to_image.size(); ++b) {
            const std::size_t mapped = img_pos[emb.text_to_image[b]];
            if (mapped == SIZE_MAX) continue;
            txt_idx.push_back(b);
            txt_map.push_back(mapped);
        }
        Tensor s({img_idx.size(), txt_idx.size()});
        for (std::size_t a = 0; a < img_idx.size(); ++a)
            for (std::size_t b = 0; b < txt_idx.size(); ++b) {
                double total = cosine(emb.img_v[img_idx[a]], emb.txt_t[txt_idx[b]]);
                if (flags.s1)
                    total += cosine(emb.img_v_local_mean[img_idx[a]],
                                    emb.txt_tokens_mean[txt_idx[b]]);
                if (flags.s2)
                    total += cosine(emb.img_v_unified_mean[img_idx[a]],
                                    emb.txt_tokens_mean[txt_idx[b]]);
                s.at(a, b) = total;
            }
        out.per_fold.push_back(recall_report(s, txt_map));
    }

    const double n = static_cast<double>(out.per_fold.size());
    for (const RecallReport& r : out.per_fold) {
        out.averaged.i2t_r1 += r.i2t_r1 / n;
        out.averaged.i2t_r5 += r.i2t_r5 / n;
        out.averaged.i2t_r10 += r.i2t_r10 / n;
        out.averaged.t2i_r1 += r.t2i_r1 / n;
        out.averaged.t2i_r5 += r.t2i_r5 / n;
        out.averaged.t2i_r10 += r.t2i_r10 / n;
    }
    out.averaged.rsum = out.averaged.i2t_r1 + out.averaged.i2t_r5 + out.averaged.i2t_r10 +
                        out.averaged.t2i_r1 + out.averaged.t2i_r5 + out.averaged.t2i_r10;
    return out;
}

std::vector<double> word_similarity(const Tensor& projected_tokens, const Tensor& image_v) {
    const std::size_t l = projected_tokens.rows();
    std::vector<double> cos(l);
    for (std::size_t i = 0; i < l; ++i) {
        Tensor rowv({projected_tokens.cols()});
        for (std::size_t c = 0; c < projected_tokens.cols(); ++c)
            rowv[c] = projected_tokens.at(i, c);
        cos[i] = cosine(rowv, image_v);
    }
    // softmax: weights are positive, sum to 1 and are monotone in the cosine
    double mx = *std::max_element(cos.begin(), cos.end());
    double denom = 0.0;
    for (double& c : cos) {
        c = std::exp(c - mx);
        denom += c;
    }
    for (double& c : cos) c /= denom;
    return cos;
}

std::vector<WordSimilarityRow> word_similarity_export(const Dataset& ds, ModelParams& params) {
    const ModelConfig& cfg = params.config;
    ModelVars vars = bind_params(params);

    std::vector<Tensor> group_v(ds.group_ids.size());
    for (std::size_t g = 0; g < ds.group_ids.size(); ++g) {
        const LoadedSample& rep = ds.samples[ds.group_representative[g]];
        group_v[g] =
            embed_image(rep.global, rep.regions, {}, vars, cfg, ad::Mode::Eval, false).v.value();
    }

    std::vector<WordSimilarityRow> rows;
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        const LoadedSample& smp = ds.samples[s];
        Tensor projected =
            ad::affine(ad::Var::constant(smp.tokens), vars.proj.W_s, vars.proj.b_s).value();
        rows.push_back({smp.sample_id, smp.caption_group_id,
                        word_similarity(projected, group_v[ds.sample_group[s]])});
    }
    return rows;
}

} // namespace hgan
