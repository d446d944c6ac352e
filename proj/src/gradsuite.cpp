#include "hgan/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "hgan/align.hpp"
#include "hgan/autodiff.hpp"
#include "hgan/error.hpp"
#include "hgan/mfar.hpp"
#include "hgan/model.hpp"
#include "hgan/rng.hpp"
#include "hgan/train.hpp"

namespace hgan {

namespace {

using ad::Var;

Tensor randm(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

Tensor randv(Rng& rng, std::size_t n, double scale = 1.0) {
    Tensor t({n});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// values bounded away from zero, for ops with a kink there
Tensor randm_offzero(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(0.2, 1.2);
        t[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

struct Built {
    Var root;
    std::vector<Var> leaves;  // aligned with the case's parameter list
};

SuiteCase run_generic(const std::string& name, const std::function<Built()>& build,
                      const std::vector<ParamRef>& params, double h, double tol) {
    auto value = [&]() { return build().root.value()[0]; };
    auto grads = [&]() {
        Built b = build();
        ad::backward(b.root);
        std::vector<Tensor> g;
        g.reserve(b.leaves.size());
        for (const Var& leaf : b.leaves) g.push_back(leaf.grad());
        return g;
    };
    return {name, check_gradient(value, grads, params, h, tol)};
}

// weighted sum turns any output into a scalar probing every coordinate
Var probe(Var out, const Tensor& weights) {
    return ad::sum_all(ad::mul(out, Var::constant(weights)));
}

SuiteCase check_elementwise(const std::string& name, Rng& rng,
                            const std::function<Var(Var, Var)>& op2, double h, double tol) {
    Tensor a = randm(rng, 3, 4), b = randm(rng, 3, 4), w = randm(rng, 3, 4);
    std::function<Built()> build = [&]() {
        Var av = Var::leaf(a), bv = Var::leaf(b);
        return Built{probe(op2(av, bv), w), {av, bv}};
    };
    return run_generic(name, build, {{"a", &a}, {"b", &b}}, h, tol);
}

SuiteCase check_unary(const std::string& name, Rng& rng, const std::function<Var(Var)>& op,
                      double h, double tol, bool off_zero = false) {
    Tensor a = off_zero ? randm_offzero(rng, 3, 4) : randm(rng, 3, 4);
    Tensor w = randm(rng, 3, 4);
    std::function<Built()> build = [&]() {
        Var av = Var::leaf(a);
        return Built{probe(op(av), w), {av}};
    };
    return run_generic(name, build, {{"a", &a}}, h, tol);
}

SuiteCase check_full_loss(Rng& seed_rng, double h, double tol) {
    ModelConfig cfg;
    cfg.D = 8;
    cfg.H = 2;
    cfg.M = 1;
    cfg.d_p = 4;
    cfg.gru_hidden = 4;
    cfg.d0 = 5;
    cfg.d1 = 6;

    const LossConfig loss_cfg{0.2, false};

    // redraw until the instance is clear of every kink: central differences
    // at a kink say nothing about the backward pass
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::uint64_t seed = seed_rng.next_u64();
        ModelParams params = init_params(cfg, seed);
        Rng data_rng(seed ^ 0xfeed);
        std::vector<BatchSample> batch;
        for (int i = 0; i < 2; ++i) {
            BatchSample s;
            s.global = randm(data_rng, 3, cfg.d0);
            s.regions = randm(data_rng, 2, cfg.d0);
            s.tokens = randm(data_rng, 4, cfg.d1);
            batch.push_back(std::move(s));
        }

        auto build = [&]() {
            ModelVars vars = bind_params(params);
            Built b;
            b.root = batch_loss(batch, vars, cfg, loss_cfg, ad::Mode::Train, false);
            for (auto& [name, leaf] : vars.leaves) b.leaves.push_back(leaf);
            return b;
        };

        ad::KinkStats stats;
        ad::set_kink_stats(&stats);
        const double loss = build().root.value()[0];
        ad::set_kink_stats(nullptr);
        // need an active loss and a safety margin of ~100x the probe step
        if (loss <= 1e-3 || stats.min_gap() < 1e-3) continue;

        std::vector<ParamRef> refs = param_refs(params);
        return run_generic("full_loss(m=3,k=2,l=4,D=8,H=2,M=1,B=2)", build, refs, h, tol);
    }
    SuiteCase c{"full_loss(m=3,k=2,l=4,D=8,H=2,M=1,B=2)", {}};
    c.report.failure = "no kink-free instance found";
    return c;
}

} // namespace

GradSuiteResult run_gradient_suite(double h, double tol, std::uint64_t seed) {
    Rng rng(seed);
    GradSuiteResult out;
    auto push = [&](SuiteCase c) { out.cases.push_back(std::move(c)); };

    push(check_elementwise("add", rng, [](Var a, Var b) { return ad::add(a, b); }, h, tol));
    push(check_elementwise("sub", rng, [](Var a, Var b) { return ad::sub(a, b); }, h, tol));
    push(check_elementwise("mul", rng, [](Var a, Var b) { return ad::mul(a, b); }, h, tol));
    push(check_unary("scale", rng, [](Var a) { return ad::scale(a, -1.7); }, h, tol));
    push(check_unary("one_minus", rng, [](Var a) { return ad::one_minus(a); }, h, tol));
    push(check_unary("relu", rng, [](Var a) { return ad::relu(a); }, h, tol, true));
    push(check_unary("sigmoid", rng, [](Var a) { return ad::sigmoid(a); }, h, tol));
    push(check_unary("tanh", rng, [](Var a) { return ad::tanh_op(a); }, h, tol));
    push(check_unary("softmax_rows", rng, [](Var a) { return ad::softmax_rows(a); }, h, tol));

    {
        Tensor a = randm(rng, 3, 4), w = randm(rng, 2, 6);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a);
            return Built{probe(ad::reshape(av, {2, 6}), w), {av}};
        };
        push(run_generic("reshape", build, {{"a", &a}}, h, tol));
    }

    {
        Tensor a = randm(rng, 3, 4), b = randm(rng, 4, 2), w = randm(rng, 3, 2);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{probe(ad::matmul(av, bv), w), {av, bv}};
        };
        push(run_generic("matmul", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randm(rng, 3, 4), b = randm(rng, 2, 4), w = randm(rng, 3, 2);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{probe(ad::matmul_nt(av, bv), w), {av, bv}};
        };
        push(run_generic("matmul_nt", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor m = randm(rng, 3, 4), x = randv(rng, 4), w = randv(rng, 3);
        std::function<Built()> build = [&]() {
            Var mv = Var::leaf(m), xv = Var::leaf(x);
            return Built{ad::sum_all(ad::mul(ad::matvec(mv, xv), Var::constant(w))), {mv, xv}};
        };
        push(run_generic("matvec", build, {{"W", &m}, {"x", &x}}, h, tol));
    }
    {
        Tensor x = randm(rng, 3, 5), wm = randm(rng, 2, 5), b = randv(rng, 2);
        Tensor w = randm(rng, 3, 2);
        std::function<Built()> build = [&]() {
            Var xv = Var::leaf(x), wv = Var::leaf(wm), bv = Var::leaf(b);
            return Built{probe(ad::affine(xv, wv, bv), w), {xv, wv, bv}};
        };
        push(run_generic("affine", build, {{"x", &x}, {"W", &wm}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randv(rng, 6), w = randv(rng, 6);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a);
            return Built{ad::sum_all(ad::mul(ad::softmax_vec(av), Var::constant(w))), {av}};
        };
        push(run_generic("softmax_vec", build, {{"a", &a}}, h, tol));
    }
    {
        Tensor a = randm(rng, 4, 3), w = randv(rng, 3);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a);
            return Built{ad::sum_all(ad::mul(ad::mean_rows(av), Var::constant(w))), {av}};
        };
        push(run_generic("mean_rows", build, {{"a", &a}}, h, tol));
    }
    {
        Tensor u = randv(rng, 5), v = randv(rng, 5);
        std::function<Built()> build = [&]() {
            Var uv = Var::leaf(u), vv = Var::leaf(v);
            return Built{ad::dot(uv, vv), {uv, vv}};
        };
        push(run_generic("dot", build, {{"u", &u}, {"v", &v}}, h, tol));
    }
    {
        Tensor u = randv(rng, 5), v = randv(rng, 5);
        std::function<Built()> build = [&]() {
            Var uv = Var::leaf(u), vv = Var::leaf(v);
            return Built{ad::cosine(uv, vv), {uv, vv}};
        };
        push(run_generic("cosine", build, {{"u", &u}, {"v", &v}}, h, tol));
    }
    {
        Tensor a = randm(rng, 2, 3), b = randm(rng, 3, 3), w = randm(rng, 5, 3);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{probe(ad::concat_rows({av, bv}), w), {av, bv}};
        };
        push(run_generic("concat_rows", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randm(rng, 3, 2), b = randm(rng, 3, 3), w = randm(rng, 3, 5);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{probe(ad::concat_cols({av, bv}), w), {av, bv}};
        };
        push(run_generic("concat_cols", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randv(rng, 3), b = randv(rng, 2), w = randv(rng, 5);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{ad::sum_all(ad::mul(ad::concat_vecs({av, bv}), Var::constant(w))),
                         {av, bv}};
        };
        push(run_generic("concat_vecs", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randv(rng, 4), b = randv(rng, 4), w = randm(rng, 2, 4);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a), bv = Var::leaf(b);
            return Built{probe(ad::stack_rows({av, bv}), w), {av, bv}};
        };
        push(run_generic("stack_rows", build, {{"a", &a}, {"b", &b}}, h, tol));
    }
    {
        Tensor a = randm(rng, 4, 3), w = randm(rng, 2, 3);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a);
            return Built{probe(ad::gather_rows(av, {2, 0}), w), {av}};
        };
        push(run_generic("gather_rows", build, {{"a", &a}}, h, tol));
    }
    {
        Tensor a = randm(rng, 4, 3), w = randv(rng, 3);
        std::function<Built()> build = [&]() {
            Var av = Var::leaf(a);
            return Built{ad::sum_all(ad::mul(ad::row(av, 2), Var::constant(w))), {av}};
        };
        push(run_generic("row", build, {{"a", &a}}, h, tol));
    }
    {
        Tensor s1 = Tensor::scalar(rng.normal()), s2 = Tensor::scalar(rng.normal());
        Tensor w = randv(rng, 2);
        std::function<Built()> build = [&]() {
            Var v1 = Var::leaf(s1), v2 = Var::leaf(s2);
            return Built{
                ad::sum_all(ad::mul(ad::stack_scalars({v1, v2}, {2}), Var::constant(w))),
                {v1, v2}};
        };
        push(run_generic("stack_scalars", build, {{"s1", &s1}, {"s2", &s2}}, h, tol));
    }
    {
        // train mode: gradients flow through the batch statistics
        Tensor x = randm(rng, 5, 3), gamma = randv(rng, 3), beta = randv(rng, 3);
        Tensor w = randm(rng, 5, 3);
        ad::BatchNormState state = ad::BatchNormState::init(3);
        std::function<Built()> build = [&]() {
            Var xv = Var::leaf(x), gv = Var::leaf(gamma), bv = Var::leaf(beta);
            return Built{
                probe(ad::batch_norm(xv, gv, bv, state, ad::Mode::Train, false), w),
                {xv, gv, bv}};
        };
        push(run_generic("batch_norm(train)", build,
                         {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}}, h, tol));
    }
    {
        Tensor x = randm(rng, 5, 3), gamma = randv(rng, 3), beta = randv(rng, 3);
        Tensor w = randm(rng, 5, 3);
        ad::BatchNormState state = ad::BatchNormState::init(3);
        for (std::size_t c = 0; c < 3; ++c) {
            state.running_mean[c] = 0.3 * rng.normal();
            state.running_var[c] = rng.uniform(0.5, 1.5);
        }
        std::function<Built()> build = [&]() {
            Var xv = Var::leaf(x), gv = Var::leaf(gamma), bv = Var::leaf(beta);
            return Built{probe(ad::batch_norm(xv, gv, bv, state, ad::Mode::Eval, false), w),
                         {xv, gv, bv}};
        };
        push(run_generic("batch_norm(eval)", build,
                         {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}}, h, tol));
    }
    {
        // distinct channel values keep the sort order stable under +-h
        Tensor x = randm(rng, 5, 3);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.01 * static_cast<double>(i);
        Tensor theta = randv(rng, 5), w = randv(rng, 3);
        std::function<Built()> build = [&]() {
            Var xv = Var::leaf(x), tv = Var::leaf(theta);
            return Built{ad::sum_all(ad::mul(ad::sort_pool(xv, tv), Var::constant(w))),
                         {xv, tv}};
        };
        push(run_generic("sort_pool", build, {{"nodes", &x}, {"theta", &theta}}, h, tol));
    }
    {
        Tensor s = randm(rng, 4, 4);
        std::function<Built()> build = [&]() {
            Var sv = Var::leaf(s);
            return Built{ad::triplet_loss(sv, 0.4, false), {sv}};
        };
        push(run_generic("triplet_loss", build, {{"S", &s}}, h, tol));
    }
    {
        Tensor x = randv(rng, 3), hp = randv(rng, 4, 0.5);
        Tensor wz = randm(rng, 4, 3), uz = randm(rng, 4, 4), bz = randv(rng, 4, 0.1);
        Tensor wr = randm(rng, 4, 3), ur = randm(rng, 4, 4), br = randv(rng, 4, 0.1);
        Tensor wh = randm(rng, 4, 3), uh = randm(rng, 4, 4), bh = randv(rng, 4, 0.1);
        Tensor w = randv(rng, 4);
        std::function<Built()> build = [&]() {
            Var xv = Var::leaf(x), hv = Var::leaf(hp);
            ad::GruCellVars g{Var::leaf(wz), Var::leaf(uz), Var::leaf(bz),
                              Var::leaf(wr), Var::leaf(ur), Var::leaf(br),
                              Var::leaf(wh), Var::leaf(uh), Var::leaf(bh)};
            Var out = ad::gru_cell(xv, hv, g);
            return Built{ad::sum_all(ad::mul(out, Var::constant(w))),
                         {xv, hv, g.W_z, g.U_z, g.b_z, g.W_r, g.U_r, g.b_r, g.W_h, g.U_h,
                          g.b_h}};
        };
        push(run_generic("gru_cell", build,
                         {{"x", &x},
                          {"h", &hp},
                          {"W_z", &wz},
                          {"U_z", &uz},
                          {"b_z", &bz},
                          {"W_r", &wr},
                          {"U_r", &ur},
                          {"b_r", &br},
                          {"W_h", &wh},
                          {"U_h", &uh},
                          {"b_h", &bh}},
                         h, tol));
    }

    push(check_full_loss(rng, h, tol));

    for (const SuiteCase& c : out.cases) {
        out.all_pass = out.all_pass && c.report.pass;
        out.max_rel_err = std::max(out.max_rel_err, c.report.max_rel_err);
    }
    return out;
}

} // namespace hgan
