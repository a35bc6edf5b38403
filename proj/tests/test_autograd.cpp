#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tdpcr/autograd.hpp"
#include "tdpcr/objectives.hpp"
#include "tdpcr/rng.hpp"

using namespace tdpcr;

namespace {

Tensor<double> randn(std::vector<int> shape, Rng rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Checks d(scalar out)/d(each input tensor) against central differences.
// builder: (tape, leaves) -> scalar Value*.
template <class Builder>
void gradcheck(Builder&& build, std::vector<Tensor<double>> inputs, double tol = 1e-6, int probes = 6,
               double step = 1e-5) {
    Tape<double> tape;
    std::vector<Value<double>*> leaves;
    for (auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Value<double>* out = build(tape, leaves);
    REQUIRE(out->val.size() == 1);
    tape.backward(out);
    std::vector<Tensor<double>> analytic;
    for (auto* l : leaves) analytic.push_back(l->has_grad() ? l->grad : Tensor<double>(l->val.shape()));

    Rng pick(99);
    for (size_t t = 0; t < inputs.size(); ++t) {
        for (int p = 0; p < probes; ++p) {
            const size_t idx = pick.uniform_int(inputs[t].size());
            auto f = [&]() {
                Tape<double> tp2;
                std::vector<Value<double>*> lv;
                for (auto& x : inputs) lv.push_back(tp2.leaf(x, false));
                return build(tp2, lv)->val[0];
            };
            const double num = numeric_grad(f, inputs[t], idx, step);
            const double ana = analytic[t][idx];
            INFO("tensor ", t, " idx ", idx, " analytic ", ana, " numeric ", num);
            CHECK(rel_err(ana, num) < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(1);
    auto a = randn({2, 3, 4, 4}, rng.stream("a"));
    auto b = randn({2, 3, 4, 4}, rng.stream("b"), 0.7);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::mul(tp, ag::add(tp, l[0], l[1]), ag::sub(tp, l[0], l[1])));
        },
        {a, b});
    // div with denominators bounded away from zero
    auto den = randn({2, 3, 4, 4}, rng.stream("d"));
    for (size_t i = 0; i < den.size(); ++i) den[i] = 1.5 + 0.3 * std::tanh(den[i]);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) { return ag::mean_all(tp, ag::div(tp, l[0], l[1])); },
        {a, den});
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::gelu(tp, ag::mul_scalar(tp, l[0], 1.3)));
        },
        {a});
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::sigmoid(tp, ag::add_scalar(tp, l[0], 0.2)));
        },
        {a});
}

TEST_CASE("lerp gradient and convexity") {
    Rng rng(2);
    auto a = randn({1, 2, 3, 3}, rng.stream("a"));
    auto b = randn({1, 2, 3, 3}, rng.stream("b"));
    auto traw = randn({1, 2, 3, 3}, rng.stream("t"), 0.5);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::lerp(tp, l[0], l[1], ag::sigmoid(tp, l[2])));
        },
        {a, b, traw});
}

TEST_CASE("structure op gradients") {
    Rng rng(3);
    auto x = randn({2, 6, 5, 5}, rng.stream("x"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::mul(tp, ag::slice_chan(tp, l[0], 1, 2), ag::slice_chan(tp, l[0], 3, 2)));
        },
        {x});
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) { return ag::mean_all(tp, ag::simple_gate(tp, l[0])); },
        {x});
    auto y = randn({2, 3, 5, 5}, rng.stream("y"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            std::vector<Value<double>*> parts = {l[0], l[1]};
            auto* c = ag::concat_chan(tp, parts);
            return ag::mean_all(tp, ag::mul(tp, c, c));
        },
        {x, y});
}

TEST_CASE("simple_gate products and errors") {
    Tape<double> tp;
    // ones * ones = ones; zeros kill; [[2],[3]] -> 6
    Tensor<double> x({1, 2, 1, 1});
    x[0] = 2.0;
    x[1] = 3.0;
    auto* g = ag::simple_gate(tp, tp.leaf(x));
    CHECK(g->val[0] == doctest::Approx(6.0));
    Tensor<double> ones = Tensor<double>::full({1, 4, 2, 2}, 1.0);
    auto* g1 = ag::simple_gate(tp, tp.leaf(ones));
    for (size_t i = 0; i < g1->val.size(); ++i) CHECK(g1->val[i] == 1.0);
    Tensor<double> half({1, 4, 2, 2});
    for (size_t i = 0; i < 8; ++i) half[i] = 1.0;  // second half zeros
    auto* g2 = ag::simple_gate(tp, tp.leaf(half));
    for (size_t i = 0; i < g2->val.size(); ++i) CHECK(g2->val[i] == 0.0);
    Tensor<double> odd({1, 3, 2, 2});
    CHECK_THROWS_AS(ag::simple_gate(tp, tp.leaf(odd)), ShapeError);
}

TEST_CASE("conv and linear gradients") {
    Rng rng(4);
    auto x = randn({2, 3, 6, 6}, rng.stream("x"));
    auto w = randn({4, 3, 3, 3}, rng.stream("w"), 0.4);
    auto b = randn({4}, rng.stream("b"), 0.2);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::conv2d(tp, l[0], l[1], l[2], 2, 1);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {x, w, b}, 1e-5);
    auto xl = randn({3, 7}, rng.stream("xl"));
    auto wl = randn({5, 7}, rng.stream("wl"), 0.5);
    auto bl = randn({5}, rng.stream("bl"), 0.2);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::linear(tp, l[0], l[1], l[2]);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {xl, wl, bl}, 1e-5);
    auto xd = randn({2, 5, 7, 7}, rng.stream("xd"));
    auto wd = randn({5, 3, 3}, rng.stream("wd"), 0.4);
    auto bd = randn({5}, rng.stream("bd"), 0.2);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::dwconv2d(tp, l[0], l[1], l[2], 1);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {xd, wd, bd}, 1e-5);
}

TEST_CASE("layernorm, gap and broadcast gradients") {
    Rng rng(5);
    auto x = randn({2, 5, 4, 4}, rng.stream("x"));
    auto gm = randn({5}, rng.stream("g"), 0.3);
    for (size_t i = 0; i < gm.size(); ++i) gm[i] += 1.0;
    auto bt = randn({5}, rng.stream("bt"), 0.3);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::layernorm_chan(tp, l[0], l[1], l[2]);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {x, gm, bt}, 1e-5);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* g = ag::gap(tp, l[0]);
            return ag::mean_all(tp, ag::mul(tp, g, g));
        },
        {x});
    auto s = randn({2, 5}, rng.stream("s"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::mul(tp, ag::scale_chan(tp, l[0], l[1]), l[0]));
        },
        {x, s}, 1e-5);
    auto wch = randn({5}, rng.stream("wch"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            return ag::mean_all(tp, ag::mul(tp, ag::scale_chan_param(tp, l[0], l[1]), l[0]));
        },
        {x, wch}, 1e-5);
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* bc = ag::broadcast_chan(tp, l[1], 4, 4);
            return ag::mean_all(tp, ag::mul(tp, ag::add_bcast_chan(tp, l[0], l[1]), bc));
        },
        {x, s}, 1e-5);
}

TEST_CASE("resize and shuffle gradients") {
    Rng rng(6);
    auto x = randn({1, 3, 6, 6}, rng.stream("x"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::bilinear_resize(tp, l[0], 9, 4);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {x}, 1e-5);
    auto xs = randn({1, 8, 3, 3}, rng.stream("xs"));
    gradcheck(
        [](Tape<double>& tp, std::vector<Value<double>*>& l) {
            auto* y = ag::pixel_shuffle2(tp, l[0]);
            return ag::mean_all(tp, ag::mul(tp, y, y));
        },
        {xs});
}

TEST_CASE("resize linearity in the input") {
    Rng rng(61);
    auto p = randn({1, 4, 6, 6}, rng.stream("p"));
    auto q = randn({1, 4, 6, 6}, rng.stream("q"));
    Tape<double> tp;
    auto* rp = ag::bilinear_resize(tp, tp.leaf(p), 3, 9);
    auto* rq = ag::bilinear_resize(tp, tp.leaf(q), 3, 9);
    Tensor<double> comb(p.shape());
    for (size_t i = 0; i < comb.size(); ++i) comb[i] = 2.0 * p[i] - 0.5 * q[i];
    auto* rc = ag::bilinear_resize(tp, tp.leaf(comb), 3, 9);
    for (size_t i = 0; i < rc->val.size(); ++i)
        CHECK(rc->val[i] == doctest::Approx(2.0 * rp->val[i] - 0.5 * rq->val[i]).epsilon(1e-9));
}

TEST_CASE("l1 loss value and gradient away from kinks") {
    Rng rng(7);
    auto a = randn({2, 3, 4, 4}, rng.stream("a"));
    auto b = randn({2, 3, 4, 4}, rng.stream("b"));
    // keep |a-b| > 1e-3 so central differences never cross the kink
    for (size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) < 1e-3) a[i] += 0.01;
    gradcheck([](Tape<double>& tp, std::vector<Value<double>*>& l) { return ag::l1_loss(tp, l[0], l[1]); }, {a, b});
}

TEST_CASE("ssim gradcheck and sanity") {
    Rng rng(8);
    auto a = randn({1, 2, 13, 13}, rng.stream("a"), 0.2);
    auto b = randn({1, 2, 13, 13}, rng.stream("b"), 0.2);
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = 0.5 + a[i];
        b[i] = 0.5 + b[i];
    }
    gradcheck([](Tape<double>& tp, std::vector<Value<double>*>& l) { return ssim_mean(tp, l[0], l[1]); }, {a, b},
              1e-5);
    Tape<double> tp;
    auto* same = ssim_mean(tp, tp.leaf(a), tp.leaf(a));
    CHECK(same->val[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("seg loss gradcheck, uniform-logit value, and smoothing") {
    const int B = 1, K = 6, H = 4, W = 4;
    Rng rng(9);
    auto logits = randn({B, K, H, W}, rng.stream("z"), 0.8);
    Tensor<uint8_t> labels({B, H, W});
    Rng lr = rng.stream("lab");
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>(lr.uniform_int(K));
    labels[3] = kIgnoreLabel;
    LossWeights w;
    w.label_smoothing = 0.1;
    gradcheck(
        [&](Tape<double>& tp, std::vector<Value<double>*>& l) { return seg_loss(tp, l[0], labels, w); }, {logits},
        1e-6);

    // uniform logits, eps=0 -> ln K
    Tape<double> tp;
    Tensor<double> unif = Tensor<double>::full({B, K, H, W}, 0.7);
    LossWeights w0;
    w0.label_smoothing = 0.0;
    auto* l0 = seg_loss(tp, tp.leaf(unif), labels, w0);
    CHECK(l0->val[0] == doctest::Approx(std::log(static_cast<double>(K))).epsilon(1e-12));

    // +inf-margin true logits with eps=0 -> 0
    Tensor<double> sharp({B, K, H, W});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                uint8_t lab = labels[(static_cast<size_t>(b) * H + y) * W + x];
                if (lab == kIgnoreLabel) lab = 0;
                sharp.data()[((static_cast<size_t>(b) * K + lab) * H + y) * W + x] = 60.0;
            }
    auto* l1v = seg_loss(tp, tp.leaf(sharp), labels, w0);
    CHECK(l1v->val[0] == doctest::Approx(0.0).epsilon(1e-10));

    // hand-computed 1-pixel smoothed CE, eps=0.1, K=6
    Tensor<double> one({1, K, 1, 1});
    for (int k = 0; k < K; ++k) one[k] = 0.1 * k;
    Tensor<uint8_t> onelab({1, 1, 1});
    onelab[0] = 2;
    double zmax = 0.5, lse = 0.0, zsum = 0.0;
    for (int k = 0; k < K; ++k) {
        lse += std::exp(0.1 * k - zmax);
        zsum += 0.1 * k;
    }
    lse = zmax + std::log(lse);
    const double expect = lse - 0.9 * 0.2 - (0.1 / 5.0) * (zsum - 0.2);
    auto* l2 = seg_loss(tp, tp.leaf(one), onelab, w);
    CHECK(l2->val[0] == doctest::Approx(expect).epsilon(1e-12));

    // out-of-range label -> data error
    Tensor<uint8_t> bad({1, 1, 1});
    bad[0] = K;
    CHECK_THROWS_AS(seg_loss(tp, tp.leaf(one), bad, w), DataError);
}

TEST_CASE("joint loss weighting is exact") {
    Rng rng(10);
    const int B = 1, K = 4, H = 12, W = 12;
    auto pred = randn({B, 3, H, W}, rng.stream("p"), 0.1);
    auto gt = randn({B, 3, H, W}, rng.stream("g"), 0.1);
    for (size_t i = 0; i < pred.size(); ++i) {
        pred[i] += 0.5;
        gt[i] += 0.5;
    }
    auto logits = randn({B, K, H, W}, rng.stream("z"));
    Tensor<uint8_t> labels({B, H, W});
    Rng lr = rng.stream("lab2");
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>(lr.uniform_int(K));

    Tape<double> tp;
    LossWeights w;  // rec=seg=1
    auto* lj = joint_loss(tp, tp.leaf(pred), tp.leaf(gt), tp.leaf(logits), labels, w);
    auto* lr_only = rec_loss(tp, tp.leaf(pred), tp.leaf(gt), w);
    auto* ls_only = seg_loss(tp, tp.leaf(logits), labels, w);
    CHECK(lj->val[0] == doctest::Approx(lr_only->val[0] + ls_only->val[0]).epsilon(1e-12));

    LossWeights wz = w;
    wz.lambda_seg = 0.0;
    auto* l_noseg = joint_loss(tp, tp.leaf(pred), tp.leaf(gt), tp.leaf(logits), labels, wz);
    CHECK(l_noseg->val[0] == doctest::Approx(lr_only->val[0]).epsilon(1e-12));
    LossWeights wr = w;
    wr.lambda_rec = 0.0;
    auto* l_norec = joint_loss(tp, tp.leaf(pred), tp.leaf(gt), tp.leaf(logits), labels, wr);
    CHECK(l_norec->val[0] == doctest::Approx(ls_only->val[0]).epsilon(1e-12));
}

TEST_CASE("backward skips frozen subgraphs") {
    Rng rng(11);
    auto x = randn({1, 4, 4, 4}, rng.stream("x"));
    Tape<double> tp;
    auto* frozen = tp.leaf(x, false);
    auto* live = tp.leaf(x, true);
    auto* y = ag::mul(tp, ag::add(tp, frozen, frozen), live);
    auto* s = ag::mean_all(tp, y);
    tp.backward(s);
    CHECK(!frozen->has_grad());
    CHECK(live->has_grad());
}
