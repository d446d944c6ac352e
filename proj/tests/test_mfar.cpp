#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "hgan/error.hpp"
#include "hgan/gradcheck.hpp"
#include "hgan/mfar.hpp"
#include "hgan/rng.hpp"

using namespace hgan;
using ad::Var;

namespace {

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

struct OwnedLayer {
    std::vector<Tensor> wq, wk, wv;
    Tensor wo, gamma, beta;
    std::unique_ptr<ad::BatchNormState> bn;  // stable address for LayerVars::bn
    LayerVars vars;
};

OwnedLayer random_layer(Rng& rng, std::size_t d_model, std::size_t heads) {
    OwnedLayer l;
    const std::size_t d = d_model / heads;
    l.bn = std::make_unique<ad::BatchNormState>(ad::BatchNormState::init(d_model));
    for (std::size_t h = 0; h < heads; ++h) {
        l.wq.push_back(randm(rng, d, d_model, 0.5));
        l.wk.push_back(randm(rng, d, d_model, 0.5));
        l.wv.push_back(randm(rng, d, d_model, 0.5));
    }
    l.wo = randm(rng, d_model, d_model, 0.5);
    l.gamma = randv(rng, d_model, 0.3);
    for (std::size_t i = 0; i < d_model; ++i) l.gamma[i] += 1.0;
    l.beta = randv(rng, d_model, 0.3);
    for (std::size_t h = 0; h < heads; ++h)
        l.vars.heads.push_back(
            {Var::constant(l.wq[h]), Var::constant(l.wk[h]), Var::constant(l.wv[h])});
    l.vars.W_o = Var::constant(l.wo);
    l.vars.gamma = Var::constant(l.gamma);
    l.vars.beta = Var::constant(l.beta);
    l.vars.bn = l.bn.get();
    return l;
}

struct OwnedRearrange {
    std::vector<Tensor> store;
    RearrangeVars vars;
};

OwnedRearrange random_rearrange(Rng& rng, std::size_t d_p, std::size_t hidden,
                                double scale = 0.5) {
    OwnedRearrange r;
    auto gru = [&](ad::GruCellVars& g) {
        auto mk = [&](std::size_t rows, std::size_t cols) {
            r.store.push_back(randm(rng, rows, cols, scale));
            return Var::constant(r.store.back());
        };
        auto mkv = [&](std::size_t n) {
            r.store.push_back(randv(rng, n, scale * 0.2));
            return Var::constant(r.store.back());
        };
        g.W_z = mk(hidden, d_p);
        g.U_z = mk(hidden, hidden);
        g.b_z = mkv(hidden);
        g.W_r = mk(hidden, d_p);
        g.U_r = mk(hidden, hidden);
        g.b_r = mkv(hidden);
        g.W_h = mk(hidden, d_p);
        g.U_h = mk(hidden, hidden);
        g.b_h = mkv(hidden);
    };
    r.store.reserve(64);
    gru(r.vars.fwd);
    gru(r.vars.bwd);
    r.store.push_back(randm(rng, 1, 2 * hidden, scale));
    r.vars.mlp_w = Var::constant(r.store.back());
    r.store.push_back(Tensor({1}));
    r.vars.mlp_b = Var::constant(r.store.back());
    return r;
}

// ----- straight-line reimplementation used as the oracle ---------------------

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

std::vector<double> oracle_gru_step(const Mat& w_z, const Mat& u_z,
                                    const std::vector<double>& b_z, const Mat& w_r,
                                    const Mat& u_r, const std::vector<double>& b_r,
                                    const Mat& w_h, const Mat& u_h,
                                    const std::vector<double>& b_h,
                                    const std::vector<double>& x,
                                    const std::vector<double>& h) {
    const std::size_t dh = h.size();
    auto gate = [&](const Mat& w, const Mat& u, const std::vector<double>& b,
                    const std::vector<double>& hin) {
        std::vector<double> out(dh);
        for (std::size_t r = 0; r < dh; ++r) {
            double acc = b[r];
            for (std::size_t c = 0; c < x.size(); ++c) acc += w[r][c] * x[c];
            for (std::size_t c = 0; c < dh; ++c) acc += u[r][c] * hin[c];
            out[r] = acc;
        }
        return out;
    };
    std::vector<double> z = gate(w_z, u_z, b_z, h);
    std::vector<double> r = gate(w_r, u_r, b_r, h);
    for (std::size_t i = 0; i < dh; ++i) {
        z[i] = 1.0 / (1.0 + std::exp(-z[i]));
        r[i] = 1.0 / (1.0 + std::exp(-r[i]));
    }
    std::vector<double> rh(dh);
    for (std::size_t i = 0; i < dh; ++i) rh[i] = r[i] * h[i];
    std::vector<double> cand = gate(w_h, u_h, b_h, rh);
    std::vector<double> out(dh);
    for (std::size_t i = 0; i < dh; ++i) {
        cand[i] = std::tanh(cand[i]);
        out[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
    }
    return out;
}

std::vector<double> oracle_mfar(const Tensor& nodes_t, const OwnedLayer& layer,
                                const OwnedRearrange& rr, std::size_t heads,
                                std::size_t d_p, std::size_t hidden, double bn_eps) {
    const std::size_t n = nodes_t.rows(), d_model = nodes_t.cols();
    const std::size_t d = d_model / heads;
    Mat nodes = to_mat(nodes_t);

    // multi-head attention, head concat, output mix
    Mat mixed(n, std::vector<double>(d_model, 0.0));
    Mat concat(n, std::vector<double>(d_model, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        Mat wq = to_mat(layer.wq[h]), wk = to_mat(layer.wk[h]), wv = to_mat(layer.wv[h]);
        Mat q(n, std::vector<double>(d)), k(n, std::vector<double>(d)),
            v(n, std::vector<double>(d));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t r = 0; r < d; ++r) {
                double aq = 0, ak = 0, av = 0;
                for (std::size_t c = 0; c < d_model; ++c) {
                    aq += wq[r][c] * nodes[i][c];
                    ak += wk[r][c] * nodes[i][c];
                    av += wv[r][c] * nodes[i][c];
                }
                q[i][r] = aq;
                k[i][r] = ak;
                v[i][r] = av;
            }
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> e(n);
            double emax = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (std::size_t r = 0; r < d; ++r) acc += q[i][r] * k[j][r];
                e[j] = acc / std::sqrt(static_cast<double>(d));
                emax = std::max(emax, e[j]);
            }
            double denom = 0;
            for (std::size_t j = 0; j < n; ++j) {
                e[j] = std::exp(e[j] - emax);
                denom += e[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double alpha = e[j] / denom;
                for (std::size_t r = 0; r < d; ++r) concat[i][h * d + r] += alpha * v[j][r];
            }
        }
    }
    Mat wo = to_mat(layer.wo);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < d_model; ++r) {
            double acc = 0;
            for (std::size_t c = 0; c < d_model; ++c) acc += wo[r][c] * concat[i][c];
            mixed[i][r] = std::max(acc, 0.0);  // ReLU
        }
    // node-axis batch norm
    for (std::size_t c = 0; c < d_model; ++c) {
        double mu = 0;
        for (std::size_t i = 0; i < n; ++i) mu += mixed[i][c];
        mu /= static_cast<double>(n);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i) var += (mixed[i][c] - mu) * (mixed[i][c] - mu);
        var /= static_cast<double>(n);
        const double istd = 1.0 / std::sqrt(var + bn_eps);
        for (std::size_t i = 0; i < n; ++i)
            mixed[i][c] = layer.gamma[c] * (mixed[i][c] - mu) * istd + layer.beta[c];
    }

    // rearrangement coefficients from positional encodings via BiGRU + MLP
    Mat pe(n, std::vector<double>(d_p));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; 2 * j < d_p; ++j) {
            const double angle =
                static_cast<double>(i) /
                std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(d_p));
            pe[i][2 * j] = std::sin(angle);
            pe[i][2 * j + 1] = std::cos(angle);
        }
    auto gru_mats = [&](std::size_t base) {
        return std::array<Mat, 6>{to_mat(rr.store[base + 0]), to_mat(rr.store[base + 1]),
                                  to_mat(rr.store[base + 3]), to_mat(rr.store[base + 4]),
                                  to_mat(rr.store[base + 6]), to_mat(rr.store[base + 7])};
    };
    auto gru_vecs = [&](std::size_t base) {
        return std::array<std::vector<double>, 3>{rr.store[base + 2].values(),
                                                  rr.store[base + 5].values(),
                                                  rr.store[base + 8].values()};
    };
    const auto fm = gru_mats(0);
    const auto fv = gru_vecs(0);
    const auto bm = gru_mats(9);
    const auto bv = gru_vecs(9);

    Mat fwd(n), bwd(n);
    std::vector<double> h(hidden, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        h = oracle_gru_step(fm[0], fm[1], fv[0], fm[2], fm[3], fv[1], fm[4], fm[5], fv[2],
                            pe[i], h);
        fwd[i] = h;
    }
    h.assign(hidden, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        h = oracle_gru_step(bm[0], bm[1], bv[0], bm[2], bm[3], bv[1], bm[4], bm[5], bv[2],
                            pe[i], h);
        bwd[i] = h;
    }
    const Mat mlp_w = to_mat(rr.store[18]);
    const double mlp_b = rr.store[19][0];
    std::vector<double> scores(n);
    double smax = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = mlp_b;
        for (std::size_t c = 0; c < hidden; ++c) acc += mlp_w[0][c] * fwd[i][c];
        for (std::size_t c = 0; c < hidden; ++c) acc += mlp_w[0][hidden + c] * bwd[i][c];
        scores[i] = acc;
        smax = std::max(smax, acc);
    }
    double denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = std::exp(scores[i] - smax);
        denom += scores[i];
    }
    for (std::size_t i = 0; i < n; ++i) scores[i] /= denom;

    // per-channel descending order statistics, theta-weighted
    std::vector<double> out(d_model, 0.0);
    for (std::size_t c = 0; c < d_model; ++c) {
        std::vector<double> vals(n);
        for (std::size_t i = 0; i < n; ++i) vals[i] = mixed[i][c];
        std::sort(vals.begin(), vals.end(), std::greater<double>());
        for (std::size_t i = 0; i < n; ++i) out[c] += scores[i] * vals[i];
    }
    return out;
}

} // namespace

TEST_CASE("attention on a single node is the identity weight") {
    Rng rng(21);
    OwnedLayer layer = random_layer(rng, 4, 2);
    Var nodes = Var::constant(randm(rng, 1, 4));
    Tensor alpha = attention_scores(nodes, layer.vars.heads[0]).value();
    REQUIRE(alpha.size() == 1);
    CHECK(alpha[0] == doctest::Approx(1.0));
}

TEST_CASE("identical nodes attend uniformly") {
    Rng rng(22);
    OwnedLayer layer = random_layer(rng, 4, 2);
    Tensor nodes({3, 4});
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) nodes.at(r, c) = 0.5 * static_cast<double>(c) - 1;
    Tensor alpha = attention_scores(Var::constant(nodes), layer.vars.heads[1]).value();
    for (std::size_t i = 0; i < alpha.size(); ++i)
        CHECK(alpha[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("attention logits are the scaled dot product") {
    // unit projections with d = 4: e = q.k / sqrt(4) = 1/2
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    HeadVars head{Var::constant(eye), Var::constant(eye), Var::constant(eye)};
    Tensor nodes({2, 4});
    nodes.at(0, 0) = 1.0;  // q_0 = [1,0,0,0]
    nodes.at(1, 0) = 1.0;  // k_1 = [1,0,0,0]
    Tensor e = attention_logits(Var::constant(nodes), head).value();
    CHECK(e.at(0, 1) == doctest::Approx(1.0 / std::sqrt(4.0)).epsilon(1e-15));
}

TEST_CASE("attention rows sum to one per head") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 1 + rng.index(6);
        OwnedLayer layer = random_layer(rng, 6, 3);
        Var nodes = Var::constant(randm(rng, n, 6));
        for (const HeadVars& head : layer.vars.heads) {
            Tensor alpha = attention_scores(nodes, head).value();
            for (std::size_t r = 0; r < n; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < n; ++c) s += alpha.at(r, c);
                CHECK(std::abs(s - 1.0) <= 1e-9);
            }
        }
    }
}

TEST_CASE("single-node aggregation collapses the attention sum") {
    Rng rng(24);
    OwnedLayer layer = random_layer(rng, 4, 2);
    Tensor node = randm(rng, 1, 4);
    Tensor out =
        aggregate_layer(Var::constant(node), layer.vars, ad::Mode::Train, false).value();

    // by hand: concat of W_v^h x, mixed by W_o, ReLU; BN on one row gives beta
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(out.at(0, c) == doctest::Approx(layer.beta[c]).epsilon(1e-12));

    // eval mode with unit running stats: (relu(Wo.concat) - 0)/1 * gamma + beta
    Tensor out_eval =
        aggregate_layer(Var::constant(node), layer.vars, ad::Mode::Eval, false).value();
    std::vector<double> concat(4, 0.0);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 2; ++r) {
            double acc = 0;
            for (std::size_t c = 0; c < 4; ++c) acc += layer.wv[h].at(r, c) * node[c];
            concat[h * 2 + r] = acc;
        }
    for (std::size_t r = 0; r < 4; ++r) {
        double acc = 0;
        for (std::size_t c = 0; c < 4; ++c) acc += layer.wo.at(r, c) * concat[c];
        const double istd = 1.0 / std::sqrt(1.0 + layer.bn->epsilon);
        const double expect = layer.gamma[r] * std::max(acc, 0.0) * istd + layer.beta[r];
        CHECK(out_eval.at(0, r) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("two-node one-head layer matches a scalar hand computation") {
    // D = 2, H = 1, hand-picked weights
    Tensor wq({2, 2}, {1, 0, 0, 1});
    Tensor wk({2, 2}, {0.5, 0, 0, 0.5});
    Tensor wv({2, 2}, {1, 1, 0, 1});
    Tensor wo({2, 2}, {1, 0, 1, 1});
    ad::BatchNormState bn = ad::BatchNormState::init(2, 0.1, 1e-12);
    LayerVars layer;
    layer.heads.push_back({Var::constant(wq), Var::constant(wk), Var::constant(wv)});
    layer.W_o = Var::constant(wo);
    layer.gamma = Var::constant(bn.gamma);
    layer.beta = Var::constant(bn.beta);
    layer.bn = &bn;

    Tensor nodes({2, 2}, {1, 0, 0, 2});
    // q = nodes, k = 0.5*nodes, v = {[1,0],[2,2]}
    // e = q.k^T/sqrt(2): e00=0.5/s, e01=0, e10=0, e11=2/s with s=sqrt(2)
    const double s = std::sqrt(2.0);
    const double a00 = std::exp(0.5 / s) / (std::exp(0.5 / s) + 1.0);
    const double a01 = 1.0 - a00;
    const double a11 = std::exp(2.0 / s) / (std::exp(2.0 / s) + 1.0);
    const double a10 = 1.0 - a11;
    // head rows: h0 = a00*[1,0]+a01*[2,2], h1 = a10*[1,0]+a11*[2,2]
    const double h0x = a00 + 2 * a01, h0y = 2 * a01;
    const double h1x = a10 + 2 * a11, h1y = 2 * a11;
    // mix: out = head.Wo^T with Wo rows (1,0),(1,1)
    double m0x = h0x, m0y = h0x + h0y;
    double m1x = h1x, m1y = h1x + h1y;
    // ReLU (all positive here), then BN over the two rows per channel
    auto bn2 = [](double& a, double& b) {
        const double mu = (a + b) / 2.0;
        const double var = ((a - mu) * (a - mu) + (b - mu) * (b - mu)) / 2.0;
        const double istd = 1.0 / std::sqrt(var + 1e-12);
        a = (a - mu) * istd;
        b = (b - mu) * istd;
    };
    bn2(m0x, m1x);
    bn2(m0y, m1y);

    Tensor out =
        aggregate_layer(Var::constant(nodes), layer, ad::Mode::Train, false).value();
    CHECK(out.at(0, 0) == doctest::Approx(m0x).epsilon(1e-9));
    CHECK(out.at(0, 1) == doctest::Approx(m0y).epsilon(1e-9));
    CHECK(out.at(1, 0) == doctest::Approx(m1x).epsilon(1e-9));
    CHECK(out.at(1, 1) == doctest::Approx(m1y).epsilon(1e-9));
}

TEST_CASE("aggregation is permutation equivariant") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.index(6);
        OwnedLayer layer = random_layer(rng, 6, 2);
        Tensor nodes = randm(rng, n, 6);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        Tensor permuted({n, 6});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < 6; ++c) permuted.at(r, c) = nodes.at(perm[r], c);

        Tensor a =
            aggregate_layer(Var::constant(nodes), layer.vars, ad::Mode::Train, false).value();
        Tensor b = aggregate_layer(Var::constant(permuted), layer.vars, ad::Mode::Train, false)
                       .value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < 6; ++c)
                CHECK(std::abs(b.at(r, c) - a.at(perm[r], c)) <= 1e-9);
    }
}

TEST_CASE("positional encoding values") {
    Tensor p = positional_encoding(2, 4);
    CHECK(p.at(0, 0) == 0.0);
    CHECK(p.at(0, 1) == 1.0);
    CHECK(p.at(0, 2) == 0.0);
    CHECK(p.at(0, 3) == 1.0);
    CHECK(p.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
    CHECK(p.at(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
    CHECK(p.at(1, 2) == doctest::Approx(std::sin(0.01)).epsilon(1e-15));
    CHECK(p.at(1, 3) == doctest::Approx(std::cos(0.01)).epsilon(1e-15));
    CHECK(p.at(1, 0) == doctest::Approx(0.84147).epsilon(1e-4));
    CHECK(p.at(1, 1) == doctest::Approx(0.54030).epsilon(1e-4));
    CHECK(p.at(1, 2) == doctest::Approx(0.01000).epsilon(1e-2));
    CHECK(p.at(1, 3) == doctest::Approx(0.99995).epsilon(1e-5));

    Tensor big = positional_encoding(40, 10);
    for (std::size_t i = 0; i < big.size(); ++i) {
        CHECK(big[i] >= -1.0);
        CHECK(big[i] <= 1.0);
    }
    CHECK_THROWS_AS(positional_encoding(4, 5), ConfigError);
}

TEST_CASE("rearrangement coefficients form a distribution over nodes") {
    Rng rng(26);
    OwnedRearrange rr = random_rearrange(rng, 4, 3);
    Tensor one = rearrangement_coefficients(1, rr.vars).value();
    REQUIRE(one.size() == 1);
    CHECK(one[0] == doctest::Approx(1.0));

    for (std::size_t n = 2; n <= 64; n += 7) {
        Tensor theta = rearrangement_coefficients(n, rr.vars).value();
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(theta[i] > 0.0);
            s += theta[i];
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("zeroed generator parameters give uniform coefficients") {
    Rng rng(27);
    OwnedRearrange rr = random_rearrange(rng, 4, 3, 0.0);
    Tensor theta = rearrangement_coefficients(5, rr.vars).value();
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(theta[i] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("coefficients depend only on the node count") {
    Rng rng(28);
    OwnedRearrange rr = random_rearrange(rng, 6, 4);
    Tensor a = rearrangement_coefficients(9, rr.vars).value();
    Tensor b = rearrangement_coefficients(9, rr.vars).value();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise
}

TEST_CASE("rearrange pooling examples") {
    Tensor nodes({2, 2}, {1, 3, 3, 1});
    Tensor theta({2}, {0.75, 0.25});
    Tensor out = rearrange_pool(Var::constant(nodes), Var::constant(theta)).value();
    CHECK(out[0] == doctest::Approx(2.5));
    CHECK(out[1] == doctest::Approx(2.5));

    Tensor top({2}, {1.0, 0.0});
    Tensor mx = rearrange_pool(Var::constant(nodes), Var::constant(top)).value();
    CHECK(mx[0] == 3.0);
    CHECK(mx[1] == 3.0);
}

TEST_CASE("uniform coefficients reproduce average pooling") {
    Rng rng(29);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.index(12), d = 1 + rng.index(8);
        Tensor nodes = randm(rng, n, d, 2.0);
        Tensor theta({n});
        theta.fill(1.0 / static_cast<double>(n));
        Tensor pooled = rearrange_pool(Var::constant(nodes), Var::constant(theta)).value();
        Tensor mean = ad::mean_rows(Var::constant(nodes)).value();
        for (std::size_t c = 0; c < d; ++c)
            CHECK(std::abs(pooled[c] - mean[c]) <= 1e-12);
    }
}

TEST_CASE("mfar forward on a single node returns the aggregated row") {
    Rng rng(30);
    OwnedLayer layer = random_layer(rng, 4, 2);
    OwnedRearrange rr = random_rearrange(rng, 4, 3);
    MfarVars mfar;
    mfar.layers.push_back(layer.vars);
    mfar.rearrange = rr.vars;

    FeatureGraph g;
    g.nodes = Var::constant(randm(rng, 1, 4));
    g.local_count = 1;
    Tensor v = mfar_forward(g, mfar, ad::Mode::Train, false, false).value();
    Tensor agg =
        aggregate_layer(g.nodes, layer.vars, ad::Mode::Train, false).value();
    for (std::size_t c = 0; c < 4; ++c) CHECK(v[c] == doctest::Approx(agg.at(0, c)));
}

TEST_CASE("mfar forward is permutation invariant") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.index(6);
        OwnedLayer l0 = random_layer(rng, 6, 2);
        OwnedLayer l1 = random_layer(rng, 6, 2);
        OwnedRearrange rr = random_rearrange(rng, 4, 3);
        MfarVars mfar;
        mfar.layers.push_back(l0.vars);
        mfar.layers.push_back(l1.vars);
        mfar.rearrange = rr.vars;

        Tensor nodes = randm(rng, n, 6);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        Tensor permuted({n, 6});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < 6; ++c) permuted.at(r, c) = nodes.at(perm[r], c);

        FeatureGraph ga, gb;
        ga.nodes = Var::constant(nodes);
        gb.nodes = Var::constant(permuted);
        ga.local_count = gb.local_count = n;
        Tensor va = mfar_forward(ga, mfar, ad::Mode::Train, false, false).value();
        Tensor vb = mfar_forward(gb, mfar, ad::Mode::Train, false, false).value();
        for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(va[c] - vb[c]) <= 1e-9);
    }
}

TEST_CASE("tiny mfar instance matches the straight-line reimplementation") {
    Rng rng(32);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 3, d_model = 4, heads = 2, d_p = 4, hidden = 3;
        OwnedLayer layer = random_layer(rng, d_model, heads);
        OwnedRearrange rr = random_rearrange(rng, d_p, hidden);
        MfarVars mfar;
        mfar.layers.push_back(layer.vars);
        mfar.rearrange = rr.vars;

        FeatureGraph g;
        Tensor nodes = randm(rng, n, d_model);
        g.nodes = Var::constant(nodes);
        g.local_count = n;

        Tensor got = mfar_forward(g, mfar, ad::Mode::Train, false, false).value();
        std::vector<double> want =
            oracle_mfar(nodes, layer, rr, heads, d_p, hidden, layer.bn->epsilon);
        REQUIRE(got.size() == want.size());
        for (std::size_t c = 0; c < want.size(); ++c)
            CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-12));
    }
}

TEST_CASE("mfar gradients pass the finite-difference oracle") {
    const std::size_t n = 3, d_model = 4, heads = 2, d_p = 4, hidden = 3;
    Rng seed_rng(33);
    for (int attempt = 0; attempt < 50; ++attempt) {
        Rng rng(seed_rng.next_u64());
        // owned parameter storage the checker can perturb
        std::vector<std::pair<std::string, Tensor>> store;
        auto add = [&](const std::string& name, Tensor t) {
            store.emplace_back(name, std::move(t));
        };
        const std::size_t d = d_model / heads;
        for (std::size_t h = 0; h < heads; ++h) {
            add("wq" + std::to_string(h), randm(rng, d, d_model, 0.5));
            add("wk" + std::to_string(h), randm(rng, d, d_model, 0.5));
            add("wv" + std::to_string(h), randm(rng, d, d_model, 0.5));
        }
        add("wo", randm(rng, d_model, d_model, 0.5));
        Tensor gamma = randv(rng, d_model, 0.2);
        for (std::size_t i = 0; i < d_model; ++i) gamma[i] += 1.0;
        add("gamma", gamma);
        add("beta", randv(rng, d_model, 0.2));
        for (const char* dir : {"f", "b"}) {
            for (const char* gate : {"z", "r", "h"}) {
                add(std::string("W_") + gate + dir, randm(rng, hidden, d_p, 0.5));
                add(std::string("U_") + gate + dir, randm(rng, hidden, hidden, 0.5));
                add(std::string("b_") + gate + dir, randv(rng, hidden, 0.1));
            }
        }
        add("mlp_w", randm(rng, 1, 2 * hidden, 0.5));
        add("mlp_b", randv(rng, 1, 0.1));

        Tensor nodes = randm(rng, n, d_model);
        Tensor probe_w = randv(rng, d_model);
        ad::BatchNormState bn = ad::BatchNormState::init(d_model);

        auto build = [&]() {
            std::size_t i = 0;
            auto next = [&]() { return Var::leaf(store[i++].second); };
            MfarVars mfar;
            mfar.layers.emplace_back();
            LayerVars& lv = mfar.layers.back();
            std::vector<Var> leaves;
            for (std::size_t h = 0; h < heads; ++h) {
                HeadVars hv{next(), next(), next()};
                leaves.insert(leaves.end(), {hv.W_q, hv.W_k, hv.W_v});
                lv.heads.push_back(hv);
            }
            lv.W_o = next();
            lv.gamma = next();
            lv.beta = next();
            lv.bn = &bn;
            leaves.insert(leaves.end(), {lv.W_o, lv.gamma, lv.beta});
            auto gru = [&](ad::GruCellVars& g) {
                g.W_z = next();
                g.U_z = next();
                g.b_z = next();
                g.W_r = next();
                g.U_r = next();
                g.b_r = next();
                g.W_h = next();
                g.U_h = next();
                g.b_h = next();
                leaves.insert(leaves.end(), {g.W_z, g.U_z, g.b_z, g.W_r, g.U_r, g.b_r, g.W_h,
                                             g.U_h, g.b_h});
            };
            gru(mfar.rearrange.fwd);
            gru(mfar.rearrange.bwd);
            mfar.rearrange.mlp_w = next();
            mfar.rearrange.mlp_b = next();
            leaves.insert(leaves.end(), {mfar.rearrange.mlp_w, mfar.rearrange.mlp_b});

            FeatureGraph g;
            g.nodes = Var::constant(nodes);
            g.local_count = n;
            Var out = mfar_forward(g, mfar, ad::Mode::Train, false, false);
            Var root = ad::sum_all(ad::mul(out, Var::constant(probe_w)));
            return std::pair<Var, std::vector<Var>>(root, leaves);
        };

        ad::KinkStats stats;
        ad::set_kink_stats(&stats);
        (void)build();
        ad::set_kink_stats(nullptr);
        if (stats.min_gap() < 1e-3) continue;  // redraw: too close to a kink

        std::vector<ParamRef> refs;
        for (auto& [name, tensor] : store) refs.push_back({name, &tensor});
        auto value = [&]() { return build().first.value()[0]; };
        auto grads = [&]() {
            auto [root, leaves] = build();
            ad::backward(root);
            std::vector<Tensor> g;
            for (const Var& v : leaves) g.push_back(v.grad());
            return g;
        };
        GradCheckReport rep = check_gradient(value, grads, refs);
        INFO(rep.summary());
        CHECK(rep.pass);
        return;
    }
    FAIL("no kink-free mfar instance found");
}
