#pragma once

#include <cstdint>
#include <limits>

#include "tdpcr/autograd.hpp"

namespace tdpcr {

struct LossWeights {
    double lambda_ssim = 0.1;
    double lambda_rec = 1.0;
    double lambda_seg = 1.0;
    double label_smoothing = 0.1;

    void validate() const {
        if (lambda_ssim < 0 || lambda_rec < 0 || lambda_seg < 0)
            throw ArgumentError("LossWeights: weights must be non-negative");
        if (label_smoothing < 0 || label_smoothing >= 1)
            throw ArgumentError("LossWeights: label_smoothing must be in [0,1)");
    }
};

namespace ssim_detail {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kDataRange = 1.0;

inline std::vector<double> gaussian_window() {
    std::vector<double> w(kWindow * kWindow);
    double sum = 0.0;
    for (int y = 0; y < kWindow; ++y)
        for (int x = 0; x < kWindow; ++x) {
            double dy = y - (kWindow - 1) / 2.0, dx = x - (kWindow - 1) / 2.0;
            w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            sum += w[y * kWindow + x];
        }
    for (auto& v : w) v /= sum;
    return w;
}

}  // namespace ssim_detail

// Mean SSIM over batch and bands, differentiable. Gaussian 11x11 window,
// sigma 1.5, valid-window cropping (the map covers the interior only).
template <typename T>
Value<T>* ssim_mean(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "ssim");
    const auto& s = a->val.shape();
    if (s.size() != 4) throw ShapeError("ssim: expect 4-D tensors");
    if (s[2] < ssim_detail::kWindow || s[3] < ssim_detail::kWindow)
        throw ArgumentError(strf("ssim: spatial dims %dx%d smaller than %d-pixel window", s[2], s[3],
                                 ssim_detail::kWindow));
    const int C = s[1];
    auto wv = ssim_detail::gaussian_window();
    Tensor<T> wt({C, ssim_detail::kWindow, ssim_detail::kWindow});
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < wv.size(); ++i) wt[static_cast<size_t>(c) * wv.size() + i] = static_cast<T>(wv[i]);
    Value<T>* win = tp.make(std::move(wt));

    const T c1 = static_cast<T>(ssim_detail::kK1 * ssim_detail::kDataRange * ssim_detail::kK1 * ssim_detail::kDataRange);
    const T c2 = static_cast<T>(ssim_detail::kK2 * ssim_detail::kDataRange * ssim_detail::kK2 * ssim_detail::kDataRange);

    auto blur = [&](Value<T>* x) { return ag::dwconv2d(tp, x, win, static_cast<Value<T>*>(nullptr), 0); };
    Value<T>* mu_a = blur(a);
    Value<T>* mu_b = blur(b);
    Value<T>* mu_aa = ag::mul(tp, mu_a, mu_a);
    Value<T>* mu_bb = ag::mul(tp, mu_b, mu_b);
    Value<T>* mu_ab = ag::mul(tp, mu_a, mu_b);
    Value<T>* var_a = ag::sub(tp, blur(ag::mul(tp, a, a)), mu_aa);
    Value<T>* var_b = ag::sub(tp, blur(ag::mul(tp, b, b)), mu_bb);
    Value<T>* cov = ag::sub(tp, blur(ag::mul(tp, a, b)), mu_ab);

    Value<T>* num = ag::mul(tp, ag::add_scalar(tp, ag::mul_scalar(tp, mu_ab, T(2)), c1),
                            ag::add_scalar(tp, ag::mul_scalar(tp, cov, T(2)), c2));
    Value<T>* den = ag::mul(tp, ag::add_scalar(tp, ag::add(tp, mu_aa, mu_bb), c1),
                            ag::add_scalar(tp, ag::add(tp, var_a, var_b), c2));
    return ag::mean_all(tp, ag::div(tp, num, den));
}

// L_rec = mean |pred - gt| + lambda_ssim * (1 - SSIM(pred, gt))
template <typename T>
Value<T>* rec_loss(Tape<T>& tp, Value<T>* pred, Value<T>* gt, const LossWeights& w) {
    w.validate();
    check_same_shape(pred->val, gt->val, "rec_loss");
    Value<T>* l1 = ag::l1_loss(tp, pred, gt);
    if (w.lambda_ssim == 0.0) return l1;
    Value<T>* dssim = ag::add_scalar(tp, ag::mul_scalar(tp, ssim_mean(tp, pred, gt), T(-1)), T(1));
    return ag::add(tp, l1, ag::mul_scalar(tp, dssim, static_cast<T>(w.lambda_ssim)));
}

constexpr uint8_t kIgnoreLabel = 255;

// Pixel-wise cross-entropy with label smoothing; mean over non-ignored
// pixels. Fused forward/backward (softmax recomputed on the way back).
template <typename T>
Value<T>* seg_loss(Tape<T>& tp, Value<T>* logits, const Tensor<uint8_t>& labels, const LossWeights& w) {
    w.validate();
    const auto& s = logits->val.shape();
    if (s.size() != 4) throw ShapeError("seg_loss: logits must be [B,K,H,W]");
    const int B = s[0], K = s[1], H = s[2], W = s[3];
    if (labels.shape() != std::vector<int>{B, H, W}) throw ShapeError("seg_loss: label shape mismatch");
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != kIgnoreLabel && labels[i] >= K)
            throw DataError(strf("seg_loss: label %d out of range for %d classes", labels[i], K));

    const double eps = w.label_smoothing;
    const double off = K > 1 ? eps / (K - 1) : 0.0;
    const T* pz = logits->val.data();
    double total = 0.0;
    int64_t npix = 0;
    for (int b = 0; b < B; ++b)
        for (size_t i = 0; i < plane; ++i) {
            const uint8_t y = labels[static_cast<size_t>(b) * plane + i];
            if (y == kIgnoreLabel) continue;
            const T* z = pz + static_cast<size_t>(b) * K * plane + i;
            double zmax = -std::numeric_limits<double>::infinity(), zsum = 0.0;
            for (int k = 0; k < K; ++k) zmax = std::max(zmax, static_cast<double>(z[k * plane]));
            double lse = 0.0;
            for (int k = 0; k < K; ++k) {
                zsum += static_cast<double>(z[k * plane]);
                lse += std::exp(static_cast<double>(z[k * plane]) - zmax);
            }
            lse = zmax + std::log(lse);
            const double zy = static_cast<double>(z[static_cast<size_t>(y) * plane + 0]);
            total += lse - (1.0 - eps) * zy - off * (zsum - zy);
            ++npix;
        }
    Tensor<T> out({1});
    out[0] = npix ? static_cast<T>(total / npix) : T(0);
    Value<T>* o = tp.make(std::move(out), logits->requires_grad && npix > 0);
    if (o->requires_grad) {
        auto lab = std::make_shared<Tensor<uint8_t>>(labels);
        tp.record([logits, o, lab, B, K, plane, eps, off, npix] {
            if (!o->has_grad()) return;
            const T gscale = o->grad[0] / static_cast<T>(npix);
            const T* pz2 = logits->val.data();
            T* dz = logits->ensure_grad().data();
            const uint8_t* py = lab->data();
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b)
                for (size_t i = 0; i < plane; ++i) {
                    const uint8_t y = py[static_cast<size_t>(b) * plane + i];
                    if (y == kIgnoreLabel) continue;
                    const T* z = pz2 + static_cast<size_t>(b) * K * plane + i;
                    T* dzp = dz + static_cast<size_t>(b) * K * plane + i;
                    double zmax = -std::numeric_limits<double>::infinity();
                    for (int k = 0; k < K; ++k) zmax = std::max(zmax, static_cast<double>(z[k * plane]));
                    double denom = 0.0;
                    for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(z[k * plane]) - zmax);
                    for (int k = 0; k < K; ++k) {
                        const double p = std::exp(static_cast<double>(z[k * plane]) - zmax) / denom;
                        const double q = (k == y) ? 1.0 - eps : off;
                        dzp[k * plane] += gscale * static_cast<T>(p - q);
                    }
                }
        });
    }
    return o;
}

template <typename T>
Value<T>* joint_loss(Tape<T>& tp, Value<T>* pred, Value<T>* gt, Value<T>* seg_logits,
                     const Tensor<uint8_t>& labels, const LossWeights& w) {
    Value<T>* lr = ag::mul_scalar(tp, rec_loss(tp, pred, gt, w), static_cast<T>(w.lambda_rec));
    Value<T>* ls = ag::mul_scalar(tp, seg_loss(tp, seg_logits, labels, w), static_cast<T>(w.lambda_seg));
    return ag::add(tp, lr, ls);
}

// ------------------------------ metrics ------------------------------------

// PSNR over all bands, data range 1.0. Returns +inf when MSE is zero
// (callers cap at 100 dB when tabulating).
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

inline double cap_psnr(double v) { return std::min(v, 100.0); }

// Plain SSIM metric via separable Gaussian accumulation (independent of the
// tape path used by the loss). Per-band average.
template <typename T>
double ssim_metric(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "ssim_metric");
    const auto& s = a.shape();
    if (s.size() != 4) throw ShapeError("ssim_metric: expect 4-D tensors");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    const int k = ssim_detail::kWindow;
    if (H < k || W < k) throw ArgumentError("ssim_metric: image smaller than window");
    std::vector<double> g1(k);
    {
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            double d = i - (k - 1) / 2.0;
            g1[i] = std::exp(-d * d / (2.0 * ssim_detail::kSigma * ssim_detail::kSigma));
            sum += g1[i];
        }
        for (auto& v : g1) v /= sum;
    }
    const int oh = H - k + 1, ow = W - k + 1;
    const double c1 = ssim_detail::kK1 * ssim_detail::kK1;
    const double c2 = ssim_detail::kK2 * ssim_detail::kK2;
    double acc = 0.0;
    std::vector<double> rows(5 * static_cast<size_t>(k) * ow);
    for (int bi = 0; bi < B; ++bi)
        for (int ci = 0; ci < C; ++ci) {
            const T* pa = a.data() + (static_cast<size_t>(bi) * C + ci) * H * W;
            const T* pb = b.data() + (static_cast<size_t>(bi) * C + ci) * H * W;
            // horizontal pass cached for the k rows in the current window
            auto hrow = [&](int iy, int which) -> double* { return rows.data() + (static_cast<size_t>(which) * k + iy % k) * ow; };
            auto fill_row = [&](int iy) {
                double* ra = hrow(iy, 0);
                double* rb = hrow(iy, 1);
                double* raa = hrow(iy, 2);
                double* rbb = hrow(iy, 3);
                double* rab = hrow(iy, 4);
                const T* xa = pa + static_cast<size_t>(iy) * W;
                const T* xb = pb + static_cast<size_t>(iy) * W;
                for (int ox = 0; ox < ow; ++ox) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int j = 0; j < k; ++j) {
                        const double va = xa[ox + j], vb = xb[ox + j];
                        sa += g1[j] * va;
                        sb += g1[j] * vb;
                        saa += g1[j] * va * va;
                        sbb += g1[j] * vb * vb;
                        sab += g1[j] * va * vb;
                    }
                    ra[ox] = sa;
                    rb[ox] = sb;
                    raa[ox] = saa;
                    rbb[ox] = sbb;
                    rab[ox] = sab;
                }
            };
            for (int iy = 0; iy < k; ++iy) fill_row(iy);
            for (int oy = 0; oy < oh; ++oy) {
                if (oy > 0) fill_row(oy + k - 1);
                for (int ox = 0; ox < ow; ++ox) {
                    double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                    for (int j = 0; j < k; ++j) {
                        const int iy = oy + j;
                        ma += g1[j] * hrow(iy, 0)[ox];
                        mb += g1[j] * hrow(iy, 1)[ox];
                        maa += g1[j] * hrow(iy, 2)[ox];
                        mbb += g1[j] * hrow(iy, 3)[ox];
                        mab += g1[j] * hrow(iy, 4)[ox];
                    }
                    const double va = maa - ma * ma, vb = mbb - mb * mb, cab = mab - ma * mb;
                    acc += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
        }
    return acc / (static_cast<double>(B) * C * oh * ow);
}

struct SegMetrics {
    double pixel_acc = 0.0;
    double miou = 0.0;
    std::vector<double> per_class_iou;  // NaN for classes absent from both
    std::vector<bool> present;
};

inline void accumulate_confusion(std::vector<int64_t>& confusion, const Tensor<uint8_t>& pred,
                                 const Tensor<uint8_t>& truth, int num_classes) {
    check_same_shape(pred, truth, "seg_metrics");
    if (confusion.size() != static_cast<size_t>(num_classes) * num_classes)
        confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == kIgnoreLabel) continue;
        if (truth[i] >= num_classes || pred[i] >= num_classes)
            throw DataError("seg_metrics: label out of range");
        confusion[static_cast<size_t>(truth[i]) * num_classes + pred[i]]++;
    }
}

// PA and mIoU from the confusion matrix; classes absent from both
// prediction and truth are excluded from the mean.
inline SegMetrics seg_metrics_from_confusion(const std::vector<int64_t>& confusion, int num_classes) {
    int64_t total = 0, correct = 0;
    for (int t = 0; t < num_classes; ++t)
        for (int p = 0; p < num_classes; ++p) {
            total += confusion[static_cast<size_t>(t) * num_classes + p];
            if (t == p) correct += confusion[static_cast<size_t>(t) * num_classes + p];
        }
    SegMetrics m;
    m.pixel_acc = total ? static_cast<double>(correct) / total : 0.0;
    m.per_class_iou.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    m.present.assign(num_classes, false);
    double iou_sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        int64_t tp = confusion[static_cast<size_t>(c) * num_classes + c];
        int64_t fp = 0, fn = 0;
        for (int o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += confusion[static_cast<size_t>(o) * num_classes + c];
            fn += confusion[static_cast<size_t>(c) * num_classes + o];
        }
        if (tp + fp + fn > 0) {
            m.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            m.present[c] = true;
            iou_sum += m.per_class_iou[c];
            present++;
        }
    }
    m.miou = present ? iou_sum / present : 0.0;
    return m;
}

inline SegMetrics seg_metrics(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& truth, int num_classes) {
    std::vector<int64_t> confusion;
    accumulate_confusion(confusion, pred, truth, num_classes);
    return seg_metrics_from_confusion(confusion, num_classes);
}

template <typename T>
Tensor<uint8_t> argmax_channel(const Tensor<T>& logits) {
    const auto& s = logits.shape();
    if (s.size() != 4) throw ShapeError("argmax_channel: expect [B,K,H,W]");
    const int B = s[0], K = s[1];
    const size_t plane = static_cast<size_t>(s[2]) * s[3];
    Tensor<uint8_t> out({B, s[2], s[3]});
    for (int b = 0; b < B; ++b)
        for (size_t i = 0; i < plane; ++i) {
            const T* z = logits.data() + static_cast<size_t>(b) * K * plane + i;
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (z[static_cast<size_t>(k) * plane] > z[static_cast<size_t>(best) * plane]) best = k;
            out[static_cast<size_t>(b) * plane + i] = static_cast<uint8_t>(best);
        }
    return out;
}

// Flat key-value metric records: "name value count" per line.
struct MetricRecord {
    std::string name;
    double value = 0.0;
    int64_t count = 0;
};

inline std::string format_metric_records(const std::vector<MetricRecord>& recs) {
    std::string out;
    for (const auto& r : recs) out += strf("%s %.8g %lld\n", r.name.c_str(), r.value, static_cast<long long>(r.count));
    return out;
}

}  // namespace tdpcr
