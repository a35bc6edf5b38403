#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdpcr/tensor.hpp"

namespace tdpcr {

inline constexpr int kOpticalBands = 13;
inline constexpr int kSarBands = 2;

struct SceneSpec {
    uint64_t seed = 0;
    int height = 256;
    int width = 256;
    int num_classes = 6;
    double cloud_coverage = 0.5;
    int speckle_looks = 4;
    bool shadows = true;

    void validate() const {
        if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0)
            throw ArgumentError(strf("SceneSpec: %dx%d not divisible by 8", height, width));
        if (cloud_coverage < 0.0 || cloud_coverage > 1.0)
            throw ArgumentError("SceneSpec: cloud_coverage outside [0,1]");
        if (num_classes < 2 || num_classes > 6) throw ArgumentError("SceneSpec: num_classes must be in [2,6]");
        if (speckle_looks < 1) throw ArgumentError("SceneSpec: speckle_looks must be positive");
    }
};

// One training quadruple plus the generator-truth cloud thickness
// (diagnostics only, never a model input).
struct SampleRecord {
    Tensor<float> opt_cloudy;   // [13,H,W] in [0,1]
    Tensor<float> sar;          // [2,H,W] in [0,1]
    Tensor<float> opt_clear;    // [13,H,W] in [0,1]
    Tensor<uint8_t> labels;     // [H,W] in [0,K-1]
    Tensor<float> cloud_alpha;  // [H,W] in [0,1]
    uint64_t seed = 0;
    double coverage = 0.0;

    int height() const { return labels.dim(0); }
    int width() const { return labels.dim(1); }
};

// Total function of the spec: same spec -> bit-identical record.
SampleRecord generate_scene(const SceneSpec& spec);

// Random flips + random crop, applied identically to every array.
SampleRecord augment(const SampleRecord& s, uint64_t seed, int crop_h = 128, int crop_w = 128);

// Sample directory: manifest.json + one raw row-major file per array.
void write_sample(const SampleRecord& s, const std::string& dir);
SampleRecord read_sample(const std::string& dir);

// Desk-scale dataset: split seed ranges are disjoint by construction.
struct DatasetSpec {
    int height = 256;
    int width = 256;
    int num_classes = 6;
    double coverage_min = 0.25;
    double coverage_max = 0.75;
    int speckle_looks = 4;
    bool shadows = true;
    int train_count = 512;
    int val_count = 64;
    int test_count = 64;
    uint64_t base_seed = 1000;

    void validate() const {
        SceneSpec probe{base_seed, height, width, num_classes, coverage_min, speckle_looks, shadows};
        probe.validate();
        if (coverage_max < coverage_min || coverage_max > 1.0)
            throw ArgumentError("DatasetSpec: bad coverage range");
        if (train_count < 0 || val_count < 0 || test_count < 0)
            throw ArgumentError("DatasetSpec: negative split count");
        if (std::max({train_count, val_count, test_count}) >= 1000000)
            throw ArgumentError("DatasetSpec: split too large for seed interval stride");
    }
};

std::vector<uint64_t> split_seeds(const DatasetSpec& spec, const std::string& split);
double coverage_for_seed(const DatasetSpec& spec, uint64_t seed);
SceneSpec scene_spec_for_seed(const DatasetSpec& spec, uint64_t seed);

void generate_dataset(const DatasetSpec& spec, const std::string& root);

class Dataset {
public:
    explicit Dataset(const std::string& root);
    int count(const std::string& split) const;
    SampleRecord load(const std::string& split, int idx) const;
    std::string sample_dir(const std::string& split, int idx) const;
    const DatasetSpec& spec() const { return spec_; }
    const std::vector<uint64_t>& seeds(const std::string& split) const;

private:
    std::string root_;
    DatasetSpec spec_;
    std::vector<uint64_t> train_, val_, test_;
};

}  // namespace tdpcr
