#include <doctest.h>

#include "hgan/error.hpp"
#include "hgan/graph.hpp"
#include "hgan/rng.hpp"

using namespace hgan;
using ad::Var;

namespace {

Tensor randm(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

ProjectionVars random_proj(Rng& rng, std::size_t d, std::size_t d0, std::size_t d1) {
    ProjectionVars p;
    p.W_g = Var::constant(randm(rng, d, d0));
    p.b_g = Var::constant(Tensor({d}));
    p.W_l = Var::constant(randm(rng, d, d0));
    p.b_l = Var::constant(Tensor({d}));
    p.W_s = Var::constant(randm(rng, d, d1));
    p.b_s = Var::constant(Tensor({d}));
    return p;
}

} // namespace

TEST_CASE("image graph concatenates global then local rows") {
    Rng rng(1);
    ProjectionVars proj = random_proj(rng, 6, 4, 3);
    Tensor g = randm(rng, 4, 4), l = randm(rng, 3, 4);

    FeatureGraph full = build_image_graph(g, l, {}, proj, true, true);
    CHECK(full.node_count() == 7);
    CHECK(full.global_count == 4);
    CHECK(full.local_count == 3);
    CHECK(full.nodes.value().rows() == 7);

    FeatureGraph only_g = build_image_graph(g, l, {}, proj, true, false);
    FeatureGraph only_l = build_image_graph(g, l, {}, proj, false, true);
    CHECK(only_g.node_count() == 4);
    CHECK(only_l.node_count() == 3);

    // the two single-source graphs concatenate exactly to the full graph
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(full.nodes.value().at(r, c) == only_g.nodes.value().at(r, c));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(full.nodes.value().at(4 + r, c) == only_l.nodes.value().at(r, c));
}

TEST_CASE("degenerate ablations") {
    Rng rng(2);
    ProjectionVars proj = random_proj(rng, 5, 3, 3);
    Tensor g = randm(rng, 2, 3), l = randm(rng, 2, 3);
    CHECK_THROWS_AS(build_image_graph(g, l, {}, proj, false, false), ConfigError);

    FeatureGraph only_g = build_image_graph(g, l, {}, proj, true, false);
    Tensor vg = ad::affine(Var::constant(g), proj.W_g, proj.b_g).value();
    for (std::size_t i = 0; i < vg.size(); ++i) CHECK(only_g.nodes.value()[i] == vg[i]);
}

TEST_CASE("zero raw features map every node to the bias row") {
    Rng rng(3);
    ProjectionVars proj = random_proj(rng, 4, 3, 3);
    Tensor bias_g({4}, {0.1, -0.2, 0.3, -0.4});
    Tensor bias_l({4}, {1, 2, 3, 4});
    proj.b_g = Var::constant(bias_g);
    proj.b_l = Var::constant(bias_l);
    Tensor g({2, 3}), l({3, 3});
    FeatureGraph fg = build_image_graph(g, l, {}, proj, true, true);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) CHECK(fg.nodes.value().at(r, c) == bias_g[c]);
    for (std::size_t r = 2; r < 5; ++r)
        for (std::size_t c = 0; c < 4; ++c) CHECK(fg.nodes.value().at(r, c) == bias_l[c]);
}

TEST_CASE("text graph basics") {
    Rng rng(4);
    ProjectionVars proj = random_proj(rng, 5, 3, 4);

    FeatureGraph single = build_text_graph(randm(rng, 1, 4), {}, proj);
    CHECK(single.node_count() == 1);
    CHECK(single.modality == Modality::Text);
    CHECK(single.global_count == 0);

    Tensor tok({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
    FeatureGraph dup = build_text_graph(tok, {}, proj);
    for (std::size_t c = 0; c < 5; ++c)
        CHECK(dup.nodes.value().at(0, c) == dup.nodes.value().at(1, c));
}

TEST_CASE("text graph matches a hand matrix product") {
    Rng rng(5);
    const std::size_t l = 4, d1 = 3, d = 8;
    ProjectionVars proj = random_proj(rng, d, 3, d1);
    Tensor s = randm(rng, l, d1);
    FeatureGraph g = build_text_graph(s, {}, proj);
    const Tensor& w = proj.W_s.value();
    const Tensor& b = proj.b_s.value();
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t r = 0; r < d; ++r) {
            double acc = b[r];
            for (std::size_t c = 0; c < d1; ++c) acc += w.at(r, c) * s.at(i, c);
            CHECK(g.nodes.value().at(i, r) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("edge weights are element products") {
    Rng rng(6);
    ProjectionVars proj = random_proj(rng, 2, 2, 2);
    proj.W_l = Var::constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Tensor l({2, 2}, {1, 2, 3, 4});
    FeatureGraph g = build_image_graph(l, l, {}, proj, false, true);

    Tensor e = edge_weight(g, 0, 1);
    CHECK(e[0] == 3.0);
    CHECK(e[1] == 8.0);

    Tensor self = edge_weight(g, 1, 1);
    CHECK(self[0] == 9.0);
    CHECK(self[1] == 16.0);

    CHECK_THROWS_AS(edge_weight(g, 0, 2), ShapeError);
}

TEST_CASE("edge weight symmetry on random graphs") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        ProjectionVars proj = random_proj(rng, 4, 3, 3);
        const std::size_t m = 1 + rng.index(3), k = 1 + rng.index(3);
        FeatureGraph g =
            build_image_graph(randm(rng, m, 3), randm(rng, k, 3), {}, proj, true, true);
        for (std::size_t i = 0; i < g.node_count(); ++i)
            for (std::size_t j = 0; j < g.node_count(); ++j) {
                Tensor a = edge_weight(g, i, j), b = edge_weight(g, j, i);
                for (std::size_t c = 0; c < a.size(); ++c) CHECK(a[c] == b[c]);
            }
    }
}

TEST_CASE("permuting region rows permutes only the local node block") {
    Rng rng(8);
    ProjectionVars proj = random_proj(rng, 5, 3, 3);
    Tensor g = randm(rng, 2, 3);
    Tensor l = randm(rng, 4, 3);
    Tensor lp({4, 3});
    const std::size_t perm[4] = {2, 0, 3, 1};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) lp.at(r, c) = l.at(perm[r], c);

    FeatureGraph a = build_image_graph(g, l, {}, proj, true, true);
    FeatureGraph b = build_image_graph(g, lp, {}, proj, true, true);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            CHECK(a.nodes.value().at(r, c) == b.nodes.value().at(r, c));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            CHECK(b.nodes.value().at(2 + r, c) == a.nodes.value().at(2 + perm[r], c));
}

TEST_CASE("masked rows are dropped before the graph is built") {
    Rng rng(9);
    ProjectionVars proj = random_proj(rng, 5, 3, 4);

    Tensor tok_padded({5, 4});
    Tensor tok_real({3, 4});
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            const double v = rng.normal();
            tok_padded.at(r, c) = v;
            tok_real.at(r, c) = v;
        }
    // garbage in the padding rows must not matter
    for (std::size_t r = 3; r < 5; ++r)
        for (std::size_t c = 0; c < 4; ++c) tok_padded.at(r, c) = 1e6;

    RowMask mask{1, 1, 1, 0, 0};
    FeatureGraph padded = build_text_graph(tok_padded, mask, proj);
    FeatureGraph real = build_text_graph(tok_real, {}, proj);
    REQUIRE(padded.node_count() == 3);
    for (std::size_t i = 0; i < padded.nodes.value().size(); ++i)
        CHECK(padded.nodes.value()[i] == real.nodes.value()[i]);

    CHECK_THROWS_AS(build_text_graph(tok_padded, RowMask{0, 0, 0, 0, 0}, proj), DataError);
    CHECK_THROWS_AS(build_text_graph(tok_padded, RowMask{1, 1}, proj), ShapeError);
}
