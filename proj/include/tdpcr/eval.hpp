#pragma once

#include <string>
#include <vector>

#include "tdpcr/data.hpp"
#include "tdpcr/network.hpp"
#include "tdpcr/objectives.hpp"

namespace tdpcr {

// full: restoration + segmentation metrics; cr_only: restoration metrics
// only; direct_seg: segmentation metrics only.
enum class EvalMode { full, cr_only, direct_seg };

EvalMode eval_mode_from_string(const std::string& s);
const char* eval_mode_name(EvalMode m);

struct EvalResult {
    EvalMode mode = EvalMode::full;
    double psnr = 0.0;  // capped at 100 dB per scene before averaging
    double ssim = 0.0;
    double pixel_acc = 0.0;
    double miou = 0.0;
    int scenes = 0;

    std::vector<MetricRecord> records() const;
};

// Whole-scene evaluation over a dataset split (batch of one per scene).
EvalResult evaluate(TdpcrNetwork<float>& net, const Dataset& data, const std::string& split, EvalMode mode,
                    int max_scenes = -1);

}  // namespace tdpcr
