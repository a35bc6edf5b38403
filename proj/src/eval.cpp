#include "tdpcr/eval.hpp"

namespace tdpcr {

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "full") return EvalMode::full;
    if (s == "cr-only" || s == "cr_only") return EvalMode::cr_only;
    if (s == "direct-seg" || s == "direct_seg") return EvalMode::direct_seg;
    throw ArgumentError("unknown eval mode: " + s);
}

const char* eval_mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::cr_only: return "cr-only";
        case EvalMode::direct_seg: return "direct-seg";
        default: return "full";
    }
}

std::vector<MetricRecord> EvalResult::records() const {
    std::vector<MetricRecord> recs;
    if (mode != EvalMode::direct_seg) {
        recs.push_back({"psnr", psnr, scenes});
        recs.push_back({"ssim", ssim, scenes});
    }
    if (mode != EvalMode::cr_only) {
        recs.push_back({"pixel_acc", pixel_acc, scenes});
        recs.push_back({"miou", miou, scenes});
    }
    return recs;
}

EvalResult evaluate(TdpcrNetwork<float>& net, const Dataset& data, const std::string& split, EvalMode mode,
                    int max_scenes) {
    const int n = max_scenes < 0 ? data.count(split) : std::min(max_scenes, data.count(split));
    EvalResult res;
    res.mode = mode;
    res.scenes = n;
    const int K = net.config().num_classes;
    std::vector<int64_t> confusion;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    const bool want_seg = mode != EvalMode::cr_only;
    for (int i = 0; i < n; ++i) {
        SampleRecord s = data.load(split, i);
        const int H = s.height(), W = s.width();
        Tensor<float> ic({1, kOpticalBands, H, W}), is({1, kSarBands, H, W}), gt({1, kOpticalBands, H, W});
        std::memcpy(ic.data(), s.opt_cloudy.data(), ic.size() * 4);
        std::memcpy(is.data(), s.sar.data(), is.size() * 4);
        std::memcpy(gt.data(), s.opt_clear.data(), gt.size() * 4);

        Tape<float> tape;
        auto out = net.forward(tape, tape.leaf(ic), tape.leaf(is), want_seg);
        if (mode != EvalMode::direct_seg) {
            psnr_sum += cap_psnr(psnr(out.restored->val, gt));
            ssim_sum += ssim_metric(out.restored->val, gt);
        }
        if (want_seg) {
            Tensor<uint8_t> truth({1, H, W});
            std::memcpy(truth.data(), s.labels.data(), truth.size());
            accumulate_confusion(confusion, argmax_channel(out.seg_logits->val), truth, K);
        }
    }
    if (n > 0 && mode != EvalMode::direct_seg) {
        res.psnr = psnr_sum / n;
        res.ssim = ssim_sum / n;
    }
    if (want_seg && !confusion.empty()) {
        SegMetrics m = seg_metrics_from_confusion(confusion, K);
        res.pixel_acc = m.pixel_acc;
        res.miou = m.miou;
    }
    return res;
}

}  // namespace tdpcr
