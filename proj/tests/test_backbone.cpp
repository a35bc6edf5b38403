#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tdpcr/backbone.hpp"
#include "tdpcr/pgf.hpp"
#include "tdpcr/prompt.hpp"

using namespace tdpcr;

namespace {

template <typename T>
Tensor<T> randn(std::vector<int> shape, Rng rng, T scale = T(1)) {
    Tensor<T> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = scale * static_cast<T>(rng.normal());
    return t;
}

template <typename T>
void zero_param(ParamStore<T>& st, const std::string& name) {
    auto* p = st.find(name);
    REQUIRE(p != nullptr);
    p->value.val.zero();
}

template <typename T>
void fill_param(ParamStore<T>& st, const std::string& name, T v) {
    auto* p = st.find(name);
    REQUIRE(p != nullptr);
    p->value.val.fill(v);
}

}  // namespace

TEST_CASE("naf_block is the identity at init and shape preserving") {
    ParamStore<double> st;
    BlockConfig bc{8, 2, 2};
    NafBlock<double> blk(st, "g", "g/b0", bc, Rng(3));
    Tape<double> tp;
    auto x = randn<double>({2, 8, 6, 7}, Rng(17));
    auto* y = blk.forward(tp, tp.leaf(x));
    REQUIRE(y->val.shape() == x.shape());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y->val[i] == x[i]);  // exact: residual scales start at 0
}

TEST_CASE("naf_block rejects channel mismatch") {
    ParamStore<double> st;
    NafBlock<double> blk(st, "g", "g/b0", BlockConfig{8, 2, 2}, Rng(3));
    Tape<double> tp;
    auto x = randn<double>({1, 6, 4, 4}, Rng(1));
    CHECK_THROWS_AS(blk.forward(tp, tp.leaf(x)), ShapeError);
}

TEST_CASE("block config validation") {
    CHECK_THROWS_AS(BlockConfig({3, 1, 2}).validate(), ArgumentError);  // 3*1 odd
    CHECK_THROWS_AS(BlockConfig({4, 0, 2}).validate(), ArgumentError);
    BlockConfig ok{4, 1, 2};
    ok.validate();
}

TEST_CASE("naf_block gradient vs central differences") {
    ParamStore<double> st;
    BlockConfig bc{4, 2, 2};
    NafBlock<double> blk(st, "g", "g/b0", bc, Rng(5));
    // move residual scales off zero so both sub-paths are active
    fill_param<double>(st, "g/b0.beta.scale", 0.7);
    fill_param<double>(st, "g/b0.gamma.scale", -0.4);
    auto x = randn<double>({1, 4, 5, 5}, Rng(23), 0.8);

    Tape<double> tape;
    auto* leaf = tape.leaf(x, true);
    auto* loss = ag::mean_all(tape, blk.forward(tape, leaf));
    tape.backward(loss);
    REQUIRE(leaf->has_grad());

    Rng pick(7);
    for (int p = 0; p < 10; ++p) {
        size_t idx = pick.uniform_int(x.size());
        auto f = [&]() {
            Tape<double> tp2;
            return ag::mean_all(tp2, blk.forward(tp2, tp2.leaf(x)))->val[0];
        };
        double num = numeric_grad(f, x, idx, 1e-5);
        CHECK(rel_err(leaf->grad[idx], num) < 1e-4);
    }
}

TEST_CASE("prompt generator shape, determinism, gradient") {
    ParamStore<double> st;
    PromptGenerator<double> gen(st, "prompt_generator", 13, 8, Rng(11));
    auto ic = randn<double>({1, 13, 16, 16}, Rng(2), 0.3);
    Tape<double> tp;
    auto* p1 = gen.forward(tp, tp.leaf(ic));
    CHECK(p1->val.shape() == std::vector<int>{1, 8, 16, 16});
    auto* p2 = gen.forward(tp, tp.leaf(ic));
    for (size_t i = 0; i < p1->val.size(); ++i) CHECK(p1->val[i] == p2->val[i]);

    auto bad = randn<double>({1, 4, 16, 16}, Rng(2));
    CHECK_THROWS_AS(gen.forward(tp, tp.leaf(bad)), ShapeError);

    Tape<double> tg;
    auto* leaf = tg.leaf(ic, true);
    auto* loss = ag::mean_all(tg, gen.forward(tg, leaf));
    tg.backward(loss);
    Rng pick(31);
    for (int i = 0; i < 8; ++i) {
        size_t idx = pick.uniform_int(ic.size());
        auto f = [&]() {
            Tape<double> tp2;
            return ag::mean_all(tp2, gen.forward(tp2, tp2.leaf(ic)))->val[0];
        };
        CHECK(rel_err(leaf->grad[idx], numeric_grad(f, ic, idx, 1e-5)) < 1e-4);
    }
}

TEST_CASE("prompt generator output shape at paper scale") {
    ParamStore<float> st;
    PromptGenerator<float> gen(st, "prompt_generator", 13, 8, Rng(11));
    Tape<float> tp;
    auto ic = randn<float>({1, 13, 128, 128}, Rng(4), 0.2f);
    auto* p = gen.forward(tp, tp.leaf(ic));
    CHECK(p->val.shape() == std::vector<int>{1, 8, 128, 128});
}

TEST_CASE("resize_prompt basics") {
    Tape<double> tp;
    auto p = randn<double>({1, 8, 12, 12}, Rng(3));
    auto* leaf = tp.leaf(p);
    CHECK(resize_prompt(tp, leaf, 12, 12) == leaf);  // no-op resize returns the input
    auto* up = resize_prompt(tp, leaf, 24, 24);
    CHECK(up->val.shape() == std::vector<int>{1, 8, 24, 24});
    Tensor<double> c = Tensor<double>::full({1, 2, 5, 5}, 3.25);
    auto* rc = resize_prompt(tp, tp.leaf(c), 9, 3);
    for (size_t i = 0; i < rc->val.size(); ++i) CHECK(rc->val[i] == doctest::Approx(3.25).epsilon(1e-12));
    CHECK_THROWS_AS(resize_prompt(tp, leaf, 0, 4), ArgumentError);
    CHECK_THROWS_AS(resize_prompt(tp, leaf, 4, -1), ArgumentError);
}

TEST_CASE("pgf: zeroed logit paths give exact 0.5/0.5 blending") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(13));
    zero_param(st, "pgf/s0.fc2.w");
    zero_param(st, "pgf/s0.fc2.b");
    zero_param(st, "pgf/s0.local_proj.w");
    zero_param(st, "pgf/s0.local_proj.b");
    Tape<double> tp;
    auto fo = randn<double>({2, 8, 6, 6}, Rng(1));
    auto fs = randn<double>({2, 8, 6, 6}, Rng(2));
    auto pr = randn<double>({2, 4, 6, 6}, Rng(3));
    auto tr = pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
    for (size_t i = 0; i < tr.alpha_opt->val.size(); ++i) {
        CHECK(tr.alpha_opt->val[i] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(tr.fused->val[i] == doctest::Approx(0.5 * (fo[i] + fs[i])).epsilon(1e-12));
    }
}

TEST_CASE("pgf: +20 logit margin saturates to the optical stream") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(13));
    zero_param(st, "pgf/s0.fc2.w");
    zero_param(st, "pgf/s0.fc2.b");
    zero_param(st, "pgf/s0.local_proj.w");
    auto* bias = st.find("pgf/s0.local_proj.b");
    REQUIRE(bias);
    for (int c = 0; c < 8; ++c) bias->value.val[c] = 20.0;   // l[opt] - l[sar] = +20
    for (int c = 8; c < 16; ++c) bias->value.val[c] = 0.0;
    Tape<double> tp;
    auto fo = randn<double>({1, 8, 5, 5}, Rng(4));
    auto fs = randn<double>({1, 8, 5, 5}, Rng(5));
    auto pr = randn<double>({1, 4, 5, 5}, Rng(6));
    auto tr = pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
    for (size_t i = 0; i < tr.alpha_opt->val.size(); ++i) {
        CHECK(tr.alpha_opt->val[i] >= 1.0 - 1e-8);
        CHECK(std::abs(tr.fused->val[i] - fo[i]) < 1e-7);
    }
}

TEST_CASE("pgf: alpha normalization, convex bound, residual identity") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const int C = 8 << (trial % 3);
        ParamStore<double> st;
        PgfBlock<double> pgf(st, "pgf", "pgf/s0", C, 8, BranchMode::both, rng.stream(trial));
        Tape<double> tp;
        auto fo = randn<double>({1, C, 7, 7}, rng.stream(trial).stream("fo"));
        auto fs = randn<double>({1, C, 7, 7}, rng.stream(trial).stream("fs"));
        auto pr = randn<double>({1, 8, 7, 7}, rng.stream(trial).stream("p"));
        auto tr = pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
        for (size_t i = 0; i < tr.alpha_opt->val.size(); ++i) {
            const double a = tr.alpha_opt->val[i], b = tr.alpha_sar->val[i];
            CHECK(std::abs(a + b - 1.0) <= 1e-6);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            const double lo = std::min(fo[i], fs[i]) - 1e-9, hi = std::max(fo[i], fs[i]) + 1e-9;
            CHECK(tr.fused->val[i] >= lo);
            CHECK(tr.fused->val[i] <= hi);
        }
        // psi tail is zero-initialized: refined output equals the optical input
        for (size_t i = 0; i < fo.size(); ++i) CHECK(tr.out->val[i] == fo[i]);
    }
}

TEST_CASE("pgf: shift invariance of modality weights") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(29));
    Tape<double> tp;
    auto fo = randn<double>({1, 8, 5, 5}, Rng(7));
    auto fs = randn<double>({1, 8, 5, 5}, Rng(8));
    auto pr = randn<double>({1, 4, 5, 5}, Rng(9));
    auto t1 = pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
    Tensor<double> a1 = t1.alpha_opt->val;
    // add the same constant to both modality logits via the projection bias
    auto* bias = st.find("pgf/s0.local_proj.b");
    for (size_t i = 0; i < bias->value.val.size(); ++i) bias->value.val[i] += 7.5;
    auto t2 = pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
    for (size_t i = 0; i < a1.size(); ++i) CHECK(std::abs(t2.alpha_opt->val[i] - a1[i]) <= 1e-6);
}

TEST_CASE("pgf: global branch cancellation and bottleneck floor") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 32, 8, BranchMode::both, Rng(31));
    // bottleneck floor: C=32 -> hidden width 4 (32/16 = 2 < 4)
    auto* fc1 = st.find("pgf/s0.fc1.w");
    REQUIRE(fc1);
    CHECK(fc1->value.val.shape() == std::vector<int>{4, 32});

    Tape<double> tp;
    auto f1 = randn<double>({2, 32, 4, 4}, Rng(41));
    Tensor<double> f2(f1.shape());
    for (size_t i = 0; i < f1.size(); ++i) f2[i] = -f1[i];
    auto* l_cancel = pgf.global_logits(tp, tp.leaf(f1), tp.leaf(f2));
    // z_global = 0 -> logits determined by biases alone, equal across batch
    for (int c = 0; c < 64; ++c)
        CHECK(l_cancel->val[c] == doctest::Approx(l_cancel->val[64 + c]).epsilon(1e-12));

    // constant inputs c1, c2 -> z_global = c1 + c2 per channel
    Tensor<double> ca = Tensor<double>::full({1, 32, 4, 4}, 0.3);
    Tensor<double> cb = Tensor<double>::full({1, 32, 4, 4}, -0.1);
    auto* z = ag::gap(tp, ag::add(tp, tp.leaf(ca), tp.leaf(cb)));
    for (size_t i = 0; i < z->val.size(); ++i) CHECK(z->val[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("pgf: local branch shapes and zero-prompt bias broadcast") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 64, 8, BranchMode::both, Rng(37));
    Tape<double> tp;
    Tensor<double> zero_p({2, 8, 32, 32});
    auto* ll = pgf.local_logits(tp, tp.leaf(zero_p));
    CHECK(ll->val.shape() == std::vector<int>{2, 128, 32, 32});
    // spatially constant: every position carries the projected dw-bias
    const size_t plane = 32 * 32;
    for (int bc = 0; bc < 2 * 128; ++bc) {
        const double v0 = ll->val[static_cast<size_t>(bc) * plane];
        for (size_t i = 1; i < plane; i += 97) CHECK(ll->val[static_cast<size_t>(bc) * plane + i] == doctest::Approx(v0).epsilon(1e-12));
    }
}

TEST_CASE("pgf: spatial mismatch between prompt and features is rejected") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(43));
    Tape<double> tp;
    auto fo = randn<double>({1, 8, 6, 6}, Rng(1));
    auto fs = randn<double>({1, 8, 6, 6}, Rng(2));
    auto pr = randn<double>({1, 4, 12, 12}, Rng(3));
    CHECK_THROWS_AS(pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr)), ShapeError);
}

TEST_CASE("pgf: non-finite logits surface as numeric error") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(47));
    Tape<double> tp;
    auto fo = randn<double>({1, 8, 4, 4}, Rng(1));
    auto fs = randn<double>({1, 8, 4, 4}, Rng(2));
    Tensor<double> pr({1, 4, 4, 4});
    pr[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(pgf.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr)), NumericError);
}

TEST_CASE("pgf: end-to-end gradients w.r.t. features and prompt") {
    ParamStore<double> st;
    PgfBlock<double> pgf(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(53));
    auto fo = randn<double>({1, 8, 5, 5}, Rng(10), 0.7);
    auto fs = randn<double>({1, 8, 5, 5}, Rng(11), 0.7);
    auto pr = randn<double>({1, 4, 5, 5}, Rng(12), 0.7);
    // give psi a nonzero tail so gradients pass through the refinement
    auto* w2 = st.find("pgf/s0.psi2.w");
    Rng rw(55);
    for (size_t i = 0; i < w2->value.val.size(); ++i) w2->value.val[i] = 0.2 * rw.normal();

    Tape<double> tape;
    auto* lo = tape.leaf(fo, true);
    auto* ls = tape.leaf(fs, true);
    auto* lp = tape.leaf(pr, true);
    auto tr = pgf.forward(tape, lo, ls, lp);
    tape.backward(ag::mean_all(tape, ag::mul(tape, tr.out, tr.out)));

    auto f = [&]() {
        Tape<double> tp2;
        auto t2 = pgf.forward(tp2, tp2.leaf(fo), tp2.leaf(fs), tp2.leaf(pr));
        return ag::mean_all(tp2, ag::mul(tp2, t2.out, t2.out))->val[0];
    };
    Rng pick(57);
    for (int i = 0; i < 6; ++i) {
        size_t io = pick.uniform_int(fo.size());
        CHECK(rel_err(lo->grad[io], numeric_grad(f, fo, io, 1e-5)) < 1e-4);
        size_t is = pick.uniform_int(fs.size());
        CHECK(rel_err(ls->grad[is], numeric_grad(f, fs, is, 1e-5)) < 1e-4);
        size_t ip = pick.uniform_int(pr.size());
        CHECK(rel_err(lp->grad[ip], numeric_grad(f, pr, ip, 1e-5)) < 1e-4);
    }
}

TEST_CASE("pgf: branch modes and force hook") {
    auto fo = randn<double>({1, 8, 5, 5}, Rng(61));
    auto fs = randn<double>({1, 8, 5, 5}, Rng(62));
    auto pr = randn<double>({1, 4, 5, 5}, Rng(63));
    {
        ParamStore<double> st;
        PgfBlock<double> g(st, "pgf", "pgf/s0", 8, 4, BranchMode::global_only, Rng(64));
        CHECK(st.find("pgf/s0.local_proj.w") == nullptr);
        Tape<double> tp;
        auto tr = g.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
        // global-only weights are spatially constant per channel
        const size_t plane = 25;
        for (int c = 0; c < 8; ++c)
            for (size_t i = 1; i < plane; ++i)
                CHECK(tr.alpha_opt->val[c * plane + i] == doctest::Approx(tr.alpha_opt->val[c * plane]).epsilon(1e-12));
    }
    {
        ParamStore<double> st;
        PgfBlock<double> l(st, "pgf", "pgf/s0", 8, 4, BranchMode::local_only, Rng(65));
        CHECK(st.find("pgf/s0.fc1.w") == nullptr);
        Tape<double> tp;
        auto tr = l.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
        CHECK(tr.out != nullptr);
    }
    {
        ParamStore<double> st;
        PgfBlock<double> b(st, "pgf", "pgf/s0", 8, 4, BranchMode::both, Rng(66));
        b.set_force(PgfBlock<double>::Force::optical_only);
        Tape<double> tp;
        auto tr = b.forward(tp, tp.leaf(fo), tp.leaf(fs), tp.leaf(pr), true);
        for (size_t i = 0; i < fo.size(); ++i) CHECK(tr.fused->val[i] == fo[i]);
    }
}
