#include "hgan/align.hpp"

#include "hgan/autodiff.hpp"
#include "hgan/error.hpp"

namespace hgan {

double cosine(const Tensor& u, const Tensor& v) {
    require_same_shape(u, v, "cosine");
    const double nu = tnorm(u), nv = tnorm(v);
    if (nu == 0.0 || nv == 0.0) throw DataError("cosine: zero-norm vector");
    return tdot(u, v) / (nu * nv);
}

Tensor mean_rows_value(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("mean_rows: expected rank-2, got " + x.shape_str());
    Tensor out({x.cols()});
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) acc += x.at(r, c);
        out[c] = acc / static_cast<double>(x.rows());
    }
    return out;
}

SimilarityBreakdown hierarchical_similarity(const Tensor& v_local, const Tensor& v_unified,
                                            const Tensor& v, const Tensor& t_tokens,
                                            const Tensor& t, const LevelFlags& flags) {
    SimilarityBreakdown out;
    const Tensor t_mean = mean_rows_value(t_tokens);
    if (flags.s1) {
        out.s1 = cosine(mean_rows_value(v_local), t_mean);
        out.has_s1 = true;
        out.total += out.s1;
    }
    if (flags.s2) {
        out.s2 = cosine(mean_rows_value(v_unified), t_mean);
        out.has_s2 = true;
        out.total += out.s2;
    }
    out.s3 = cosine(v, t);
    out.total += out.s3;
    return out;
}

double triplet_loss_value(const Tensor& sim, const LossConfig& cfg) {
    ad::Var s = ad::Var::constant(sim);
    return ad::triplet_loss(s, cfg.margin, cfg.mean_reduce).value()[0];
}

} // namespace hgan
