#pragma once

#include <map>
#include <optional>
#include <string>

#include "tdpcr/data.hpp"
#include "tdpcr/network.hpp"
#include "tdpcr/objectives.hpp"

namespace tdpcr {

// peft freezes the backbone (encoders + shared decoder); probe freezes
// everything but the segmentation head (the multi-stage paradigm's fixed
// probe); fpft and none train everything.
enum class FreezePolicy { none, peft, fpft, probe };

FreezePolicy freeze_policy_from_string(const std::string& s);
const char* freeze_policy_name(FreezePolicy p);

struct FreezeManifest {
    std::map<std::string, bool> trainable;  // group name -> trainable

    static FreezeManifest for_phase(int phase, FreezePolicy policy);
    void apply(ParamStore<float>& store) const;
};

struct TrainConfig {
    int phase = 1;
    FreezePolicy freeze = FreezePolicy::none;
    LossWeights loss;
    double lr = 2e-4;
    double lr_min = 1e-6;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps = 5000;
    int batch = 8;
    int crop = 128;
    int val_every = 100;
    int val_scenes = 16;
    int val_crop = 128;
    uint64_t seed = 1234;
    std::string out_dir;
    std::string init_checkpoint;  // required for phase 2 unless freeze == none
    std::string resume;           // optional mid-run checkpoint

    void validate() const;
};

struct ValMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double pixel_acc = 0.0;
    double miou = 0.0;
    int scenes = 0;
};

struct TrainResult {
    std::string best_checkpoint;
    std::string last_checkpoint;
    double best_metric = 0.0;  // val PSNR (phase 1) or val mIoU (phase 2)
    ValMetrics final_val;
    double last_loss = 0.0;
    int64_t steps_run = 0;
};

// Decoupled-weight-decay Adam over the trainable parameters only.
class AdamW {
public:
    AdamW(ParamStore<float>& store, const TrainConfig& cfg);
    void step(double lr);
    void zero_grads();
    // optimizer state as checkpoint extras ("adam.m/<name>", "adam.v/<name>")
    std::map<std::string, Tensor<float>> state() const;
    void load_state(const std::map<std::string, Tensor<float>>& extras);
    size_t num_slots() const { return m_.size(); }
    bool has_slot(const std::string& param_name) const { return m_.count(param_name) > 0; }

private:
    ParamStore<float>& store_;
    TrainConfig cfg_;
    std::map<std::string, Tensor<float>> m_, v_;
    int64_t t_ = 0;
};

struct Batch {
    Tensor<float> ic, is, gt;
    Tensor<uint8_t> labels;
};

class Trainer {
public:
    Trainer(const NetworkConfig& net_cfg, const TrainConfig& cfg, const Dataset& data);

    TrainResult run();

    // deterministic batch assembly and loss evaluation (no update)
    Batch make_batch(int64_t step) const;
    double eval_loss(const Batch& b);
    double train_step(int64_t step, double lr);

    TdpcrNetwork<float>& network() { return *net_; }
    const FreezeManifest& freeze_manifest() const { return freeze_; }
    const AdamW& optimizer() const { return *opt_; }

    // deterministic batch composition for a given step (stateless in step)
    std::vector<int> batch_indices(int64_t step) const;

    ValMetrics validate();

private:
    double lr_at(int64_t step) const;
    void log_line(const std::string& s);

    NetworkConfig net_cfg_;
    TrainConfig cfg_;
    const Dataset& data_;
    std::unique_ptr<TdpcrNetwork<float>> net_;
    std::unique_ptr<AdamW> opt_;
    FreezeManifest freeze_;
    int64_t start_step_ = 0;
    double best_restored_ = -1.0;
    std::string log_path_;
};

// Table-4 style ablation matrix (5 rows: global-only, local-only, ours,
// joint training, CR pretrain + FPFT).
struct AblationRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double pixel_acc = 0.0;
    double miou = 0.0;
    bool ok = false;
    std::string error;
};

struct AblationBudget {
    int phase1_steps = 2000;
    int phase2_steps = 800;
};

std::vector<AblationRow> run_ablation(const NetworkConfig& net_cfg, const TrainConfig& base, const Dataset& data,
                                      const AblationBudget& budget, const std::string& out_dir);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace tdpcr
