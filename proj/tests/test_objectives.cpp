#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "tdpcr/objectives.hpp"
#include "tdpcr/rng.hpp"

using namespace tdpcr;

namespace {

template <typename T>
Tensor<T> randu(std::vector<int> shape, Rng rng, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Brute-force SSIM oracle: literal windowed statistics, one window at a time.
// Independent of both the loss path (tape convolutions) and the metric path
// (separable accumulation).
double ssim_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    const int k = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> w(k * k);
    double wsum = 0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            const double dy = y - 5.0, dx = x - 5.0;
            w[y * k + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += w[y * k + x];
        }
    for (auto& v : w) v /= wsum;
    double acc = 0;
    int64_t cnt = 0;
    for (int bi = 0; bi < B; ++bi)
        for (int ci = 0; ci < C; ++ci)
            for (int oy = 0; oy + k <= H; ++oy)
                for (int ox = 0; ox + k <= W; ++ox) {
                    double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                    for (int y = 0; y < k; ++y)
                        for (int x = 0; x < k; ++x) {
                            const double va = a.at(bi, ci, oy + y, ox + x);
                            const double vb = b.at(bi, ci, oy + y, ox + x);
                            const double wt = w[y * k + x];
                            ma += wt * va;
                            mb += wt * vb;
                            maa += wt * va * va;
                            mbb += wt * vb * vb;
                            mab += wt * va * vb;
                        }
                    const double sa = maa - ma * ma, sb = mbb - mb * mb, sab = mab - ma * mb;
                    acc += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
                    ++cnt;
                }
    return acc / cnt;
}

}  // namespace

TEST_CASE("psnr basics: sentinel, 20 dB case, permutation invariance") {
    auto a = randu<float>({1, 2, 8, 8}, Rng(1));
    CHECK(std::isinf(psnr(a, a)));
    CHECK(cap_psnr(psnr(a, a)) == 100.0);

    // uniform squared error of 0.01 -> exactly 20 dB
    Tensor<float> b = a;
    for (size_t i = 0; i < b.size(); ++i) b[i] = a[i] + 0.1f * ((i % 2) ? 1.0f : -1.0f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));

    // identical permutation of both images leaves PSNR unchanged
    auto x = randu<float>({1, 1, 4, 4}, Rng(2));
    auto y = randu<float>({1, 1, 4, 4}, Rng(3));
    const double base = psnr(x, y);
    std::vector<size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng pr(4);
    for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[pr.uniform_int(i)]);
    Tensor<float> xp(x.shape()), yp(y.shape());
    for (size_t i = 0; i < perm.size(); ++i) {
        xp[i] = x[perm[i]];
        yp[i] = y[perm[i]];
    }
    CHECK(psnr(xp, yp) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("ssim metric agrees with the brute-force oracle and the loss path") {
    auto a = randu<double>({1, 2, 14, 15}, Rng(5), 0.1, 0.9);
    auto b = randu<double>({1, 2, 14, 15}, Rng(6), 0.1, 0.9);
    const double oracle = ssim_oracle(a, b);
    const double metric = ssim_metric(a, b);
    CHECK(std::abs(metric - oracle) < 1e-5);

    Tape<double> tp;
    const double via_loss = ssim_mean(tp, tp.leaf(a), tp.leaf(b))->val[0];
    CHECK(std::abs(via_loss - oracle) < 1e-5);

    CHECK(ssim_metric(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    // float path stays within metric tolerance too
    auto af = a.cast<float>();
    auto bf = b.cast<float>();
    CHECK(std::abs(ssim_metric(af, bf) - oracle) < 1e-4);
}

TEST_CASE("rec loss: zero at identity, constant offset isolates the L1 term") {
    auto gt = randu<double>({1, 3, 16, 16}, Rng(7), 0.2, 0.8);
    Tape<double> tp;
    LossWeights w;
    auto* zero = rec_loss(tp, tp.leaf(gt), tp.leaf(gt), w);
    CHECK(zero->val[0] == doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> shifted = gt;
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.5;
    LossWeights l1_only;
    l1_only.lambda_ssim = 0.0;
    auto* l = rec_loss(tp, tp.leaf(shifted), tp.leaf(gt), l1_only);
    CHECK(l->val[0] == doctest::Approx(0.5).epsilon(1e-12));

    // with the SSIM term the loss exceeds the pure L1 value
    auto* lfull = rec_loss(tp, tp.leaf(shifted), tp.leaf(gt), w);
    CHECK(lfull->val[0] > l->val[0]);
    CHECK_THROWS_AS(rec_loss(tp, tp.leaf(shifted), tp.leaf(randu<double>({1, 3, 8, 8}, Rng(1))), w), ShapeError);
}

TEST_CASE("seg metrics: perfect prediction, toy confusion oracle, ranges") {
    // 2x2 toy case, enumerate by hand: truth [0,1;1,2], pred [0,1;2,2]
    Tensor<uint8_t> truth({1, 2, 2}), pred({1, 2, 2});
    truth[0] = 0;
    truth[1] = 1;
    truth[2] = 1;
    truth[3] = 2;
    pred[0] = 0;
    pred[1] = 1;
    pred[2] = 2;
    pred[3] = 2;
    // class 0: tp=1 fp=0 fn=0 -> 1; class 1: tp=1 fp=0 fn=1 -> 0.5;
    // class 2: tp=1 fp=1 fn=0 -> 0.5; PA=3/4; mIoU=(1+0.5+0.5)/3
    auto m = seg_metrics(pred, truth, 4);
    CHECK(m.pixel_acc == doctest::Approx(0.75));
    CHECK(m.miou == doctest::Approx(2.0 / 3.0));
    CHECK(m.per_class_iou[0] == doctest::Approx(1.0));
    CHECK(m.per_class_iou[1] == doctest::Approx(0.5));
    CHECK(m.per_class_iou[2] == doctest::Approx(0.5));
    CHECK(!m.present[3]);  // class 3 absent from both -> excluded from mean

    auto perfect = seg_metrics(truth, truth, 4);
    CHECK(perfect.pixel_acc == 1.0);
    CHECK(perfect.miou == 1.0);

    // ignore label drops pixels from both counts
    Tensor<uint8_t> t2 = truth;
    t2[0] = kIgnoreLabel;
    auto m2 = seg_metrics(pred, t2, 4);
    CHECK(m2.pixel_acc == doctest::Approx(2.0 / 3.0));

    // random case stays in range
    Rng rng(8);
    Tensor<uint8_t> rp({1, 8, 8}), rt({1, 8, 8});
    for (size_t i = 0; i < rp.size(); ++i) {
        rp[i] = static_cast<uint8_t>(rng.uniform_int(5));
        rt[i] = static_cast<uint8_t>(rng.uniform_int(5));
    }
    auto mr = seg_metrics(rp, rt, 5);
    CHECK(mr.pixel_acc >= 0.0);
    CHECK(mr.pixel_acc <= 1.0);
    CHECK(mr.miou >= 0.0);
    CHECK(mr.miou <= 1.0);

    Tensor<uint8_t> bad = rt;
    bad[0] = 7;
    CHECK_THROWS_AS(seg_metrics(rp, bad, 5), DataError);
}

TEST_CASE("argmax over channel logits") {
    Tensor<float> z({1, 3, 1, 2});
    // pixel 0: class 2 wins; pixel 1: class 0 wins
    z.at(0, 0, 0, 0) = 0.1f;
    z.at(0, 1, 0, 0) = 0.5f;
    z.at(0, 2, 0, 0) = 0.9f;
    z.at(0, 0, 0, 1) = 2.0f;
    z.at(0, 1, 0, 1) = -1.0f;
    z.at(0, 2, 0, 1) = 0.0f;
    auto y = argmax_channel(z);
    CHECK(y[0] == 2);
    CHECK(y[1] == 0);
}

TEST_CASE("metric record serialization format") {
    std::vector<MetricRecord> recs = {{"psnr", 23.456, 64}, {"miou", 0.51, 64}};
    const std::string s = format_metric_records(recs);
    CHECK(s == "psnr 23.456 64\nmiou 0.51 64\n");
}

TEST_CASE("loss weight validation") {
    LossWeights w;
    w.label_smoothing = 1.0;
    CHECK_THROWS_AS(w.validate(), ArgumentError);
    LossWeights w2;
    w2.lambda_ssim = -0.1;
    CHECK_THROWS_AS(w2.validate(), ArgumentError);
}
