#include "tdpcr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tdpcr/checkpoint.hpp"
#include "tdpcr/eval.hpp"

namespace fs = std::filesystem;

namespace tdpcr {

FreezePolicy freeze_policy_from_string(const std::string& s) {
    if (s == "none") return FreezePolicy::none;
    if (s == "peft") return FreezePolicy::peft;
    if (s == "fpft") return FreezePolicy::fpft;
    if (s == "probe") return FreezePolicy::probe;
    throw ArgumentError("unknown freeze policy: " + s);
}

const char* freeze_policy_name(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::peft: return "peft";
        case FreezePolicy::fpft: return "fpft";
        case FreezePolicy::probe: return "probe";
        default: return "none";
    }
}

FreezeManifest FreezeManifest::for_phase(int phase, FreezePolicy policy) {
    FreezeManifest m;
    for (const auto& g : groups::kAll) m.trainable[g] = true;
    if (phase == 1) {
        m.trainable[groups::kSegHead] = false;  // head not attached in phase 1
        return m;
    }
    switch (policy) {
        case FreezePolicy::none:
        case FreezePolicy::fpft:
            break;
        case FreezePolicy::peft:
            m.trainable[groups::kOpticalEncoder] = false;
            m.trainable[groups::kSarEncoder] = false;
            m.trainable[groups::kSharedDecoder] = false;
            break;
        case FreezePolicy::probe:
            for (const auto& g : groups::kAll) m.trainable[g] = false;
            m.trainable[groups::kSegHead] = true;
            break;
    }
    return m;
}

void FreezeManifest::apply(ParamStore<float>& store) const {
    for (const auto& [group, tr] : trainable) store.set_group_trainable(group, tr);
}

void TrainConfig::validate() const {
    loss.validate();
    if (phase != 1 && phase != 2) throw ArgumentError("TrainConfig: phase must be 1 or 2");
    if (phase == 2 && freeze != FreezePolicy::none && init_checkpoint.empty() && resume.empty())
        throw ArgumentError("TrainConfig: phase 2 requires a phase-1 checkpoint unless freeze policy is 'none'");
    if (steps < 0 || batch <= 0) throw ArgumentError("TrainConfig: bad steps/batch");
    if (crop < 16 || crop % 8 != 0) throw ArgumentError("TrainConfig: crop must be >=16 and divisible by 8");
    if (lr <= 0 || lr_min < 0 || lr_min > lr) throw ArgumentError("TrainConfig: bad learning rates");
    if (out_dir.empty()) throw ArgumentError("TrainConfig: out_dir required");
}

// ------------------------------- optimizer ---------------------------------

AdamW::AdamW(ParamStore<float>& store, const TrainConfig& cfg) : store_(store), cfg_(cfg) {
    // slots exist only for trainable parameters
    for (const auto& p : store.all())
        if (p->trainable) {
            m_[p->name] = Tensor<float>(p->value.val.shape());
            v_[p->name] = Tensor<float>(p->value.val.shape());
        }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& p : store_.all()) {
        if (!p->trainable) continue;
        if (!p->value.has_grad()) continue;  // unreached parameters this step
        auto& m = m_[p->name];
        auto& v = v_[p->name];
        float* pm = m.data();
        float* pv = v.data();
        float* pw = p->value.val.data();
        const float* pg = p->value.grad.data();
        const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        const float wd = static_cast<float>(cfg_.weight_decay);
        const float eps = static_cast<float>(cfg_.adam_eps);
        const float lrf = static_cast<float>(lr);
        const int64_t n = static_cast<int64_t>(p->size());
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            pm[i] = b1 * pm[i] + (1.0f - b1) * pg[i];
            pv[i] = b2 * pv[i] + (1.0f - b2) * pg[i] * pg[i];
            const float mhat = pm[i] / static_cast<float>(bc1);
            const float vhat = pv[i] / static_cast<float>(bc2);
            pw[i] -= lrf * (mhat / (std::sqrt(vhat) + eps) + wd * pw[i]);
        }
    }
}

void AdamW::zero_grads() { store_.zero_grads(); }

std::map<std::string, Tensor<float>> AdamW::state() const {
    std::map<std::string, Tensor<float>> out;
    for (const auto& [name, t] : m_) out["adam.m/" + name] = t;
    for (const auto& [name, t] : v_) out["adam.v/" + name] = t;
    Tensor<float> tt({1});
    tt[0] = static_cast<float>(t_);
    out["adam.t"] = tt;
    return out;
}

void AdamW::load_state(const std::map<std::string, Tensor<float>>& extras) {
    for (auto& [name, t] : m_) {
        auto it = extras.find("adam.m/" + name);
        if (it != extras.end() && it->second.same_shape(t)) t = it->second;
    }
    for (auto& [name, t] : v_) {
        auto it = extras.find("adam.v/" + name);
        if (it != extras.end() && it->second.same_shape(t)) t = it->second;
    }
    auto it = extras.find("adam.t");
    if (it != extras.end()) t_ = static_cast<int64_t>(it->second[0]);
}

// -------------------------------- trainer ----------------------------------

Trainer::Trainer(const NetworkConfig& net_cfg, const TrainConfig& cfg, const Dataset& data)
    : net_cfg_(net_cfg), cfg_(cfg), data_(data) {
    cfg_.validate();
    net_cfg_.validate();
    if (data_.count("train") == 0) throw DataError("trainer: empty train split");
    if (cfg_.crop > data_.spec().height || cfg_.crop > data_.spec().width)
        throw ArgumentError("trainer: crop larger than dataset scenes");
    net_cfg_.num_classes = data_.spec().num_classes;
    net_ = std::make_unique<TdpcrNetwork<float>>(net_cfg_, cfg_.seed);

    if (!cfg_.resume.empty()) {
        std::map<std::string, Tensor<float>> extras;
        auto info = load_checkpoint(cfg_.resume, *net_, &extras);
        start_step_ = info.meta.step;
        freeze_ = FreezeManifest::for_phase(cfg_.phase, cfg_.freeze);
        freeze_.apply(net_->store());
        opt_ = std::make_unique<AdamW>(net_->store(), cfg_);
        opt_->load_state(extras);
        auto it = extras.find("trainer.best_metric");
        best_restored_ = it != extras.end() ? static_cast<double>(it->second[0]) : -1.0;
    } else {
        if (cfg_.phase == 2 && !cfg_.init_checkpoint.empty()) load_checkpoint(cfg_.init_checkpoint, *net_);
        freeze_ = FreezeManifest::for_phase(cfg_.phase, cfg_.freeze);
        freeze_.apply(net_->store());
        opt_ = std::make_unique<AdamW>(net_->store(), cfg_);
    }
    fs::create_directories(cfg_.out_dir);
    log_path_ = (fs::path(cfg_.out_dir) / "train_log.txt").string();
}

void Trainer::log_line(const std::string& s) {
    std::ofstream f(log_path_, std::ios::app);
    f << s << "\n";
    std::fputs((s + "\n").c_str(), stdout);
    std::fflush(stdout);
}

std::vector<int> Trainer::batch_indices(int64_t step) const {
    const int n = data_.count("train");
    std::vector<int> out(cfg_.batch);
    int64_t epoch_cached = -1;
    std::vector<int> perm;
    for (int i = 0; i < cfg_.batch; ++i) {
        const int64_t j = step * cfg_.batch + i;
        const int64_t epoch = j / n;
        if (epoch != epoch_cached) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), 0);
            Rng r = Rng(cfg_.seed).stream("order").stream(static_cast<uint64_t>(epoch));
            for (size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[r.uniform_int(k)]);
            epoch_cached = epoch;
        }
        out[i] = perm[j % n];
    }
    return out;
}

double Trainer::lr_at(int64_t step) const {
    if (cfg_.steps <= 1) return cfg_.lr;
    const double t = static_cast<double>(step) / static_cast<double>(cfg_.steps - 1);
    return cfg_.lr_min + 0.5 * (cfg_.lr - cfg_.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

Batch Trainer::make_batch(int64_t step) const {
    const auto idx = batch_indices(step);
    const int B = cfg_.batch, c = cfg_.crop;
    Batch b;
    b.ic = Tensor<float>({B, kOpticalBands, c, c});
    b.is = Tensor<float>({B, kSarBands, c, c});
    b.gt = Tensor<float>({B, kOpticalBands, c, c});
    b.labels = Tensor<uint8_t>({B, c, c});
    const size_t plane = static_cast<size_t>(c) * c;
    for (int i = 0; i < B; ++i) {
        SampleRecord s = data_.load("train", idx[i]);
        const uint64_t aug_seed =
            Rng(cfg_.seed).stream("aug").stream(static_cast<uint64_t>(step)).stream(i).next_u64();
        SampleRecord a = augment(s, aug_seed, c, c);
        std::memcpy(b.ic.data() + static_cast<size_t>(i) * kOpticalBands * plane, a.opt_cloudy.data(),
                    kOpticalBands * plane * 4);
        std::memcpy(b.is.data() + static_cast<size_t>(i) * kSarBands * plane, a.sar.data(), kSarBands * plane * 4);
        std::memcpy(b.gt.data() + static_cast<size_t>(i) * kOpticalBands * plane, a.opt_clear.data(),
                    kOpticalBands * plane * 4);
        std::memcpy(b.labels.data() + static_cast<size_t>(i) * plane, a.labels.data(), plane);
    }
    return b;
}

double Trainer::eval_loss(const Batch& b) {
    Tape<float> tape;
    auto out = net_->forward(tape, tape.leaf(b.ic), tape.leaf(b.is), cfg_.phase == 2);
    Value<float>* loss = cfg_.phase == 2
                             ? joint_loss(tape, out.restored, tape.leaf(b.gt), out.seg_logits, b.labels, cfg_.loss)
                             : rec_loss(tape, out.restored, tape.leaf(b.gt), cfg_.loss);
    return loss->val[0];
}

double Trainer::train_step(int64_t step, double lr) {
    Batch b = make_batch(step);
    Tape<float> tape;
    const bool with_seg = cfg_.phase == 2;
    auto out = net_->forward(tape, tape.leaf(b.ic), tape.leaf(b.is), with_seg);
    Value<float>* loss = with_seg
                             ? joint_loss(tape, out.restored, tape.leaf(b.gt), out.seg_logits, b.labels, cfg_.loss)
                             : rec_loss(tape, out.restored, tape.leaf(b.gt), cfg_.loss);
    const double lval = loss->val[0];
    if (!std::isfinite(lval)) {
        double rmin = 1e30, rmax = -1e30, rsum = 0;
        for (size_t i = 0; i < out.restored->val.size(); ++i) {
            rmin = std::min(rmin, static_cast<double>(out.restored->val[i]));
            rmax = std::max(rmax, static_cast<double>(out.restored->val[i]));
            rsum += out.restored->val[i];
        }
        throw NumericError(strf("non-finite loss at step %lld (restored min=%g max=%g mean=%g)",
                                static_cast<long long>(step), rmin, rmax,
                                rsum / static_cast<double>(out.restored->val.size())));
    }
    tape.backward(loss);
    opt_->step(lr);
    opt_->zero_grads();
    return lval;
}

ValMetrics Trainer::validate() {
    ValMetrics m;
    const int n = std::min(cfg_.val_scenes, data_.count("val"));
    if (n == 0) return m;
    const int vc = std::min({cfg_.val_crop, data_.spec().height, data_.spec().width});
    std::vector<int64_t> confusion;
    const bool with_seg = cfg_.phase == 2;
    for (int i = 0; i < n; ++i) {
        SampleRecord s = data_.load("val", i);
        const int oy = (s.height() - vc) / 2, ox = (s.width() - vc) / 2;
        Tensor<float> ic({1, kOpticalBands, vc, vc}), is({1, kSarBands, vc, vc}), gt({1, kOpticalBands, vc, vc});
        Tensor<uint8_t> truth({1, vc, vc});
        const size_t plane = static_cast<size_t>(s.height()) * s.width();
        for (int b = 0; b < kOpticalBands; ++b)
            for (int y = 0; y < vc; ++y)
                std::memcpy(ic.data() + (static_cast<size_t>(b) * vc + y) * vc,
                            s.opt_cloudy.data() + b * plane + (static_cast<size_t>(oy + y) * s.width() + ox),
                            static_cast<size_t>(vc) * 4);
        for (int b = 0; b < kSarBands; ++b)
            for (int y = 0; y < vc; ++y)
                std::memcpy(is.data() + (static_cast<size_t>(b) * vc + y) * vc,
                            s.sar.data() + b * plane + (static_cast<size_t>(oy + y) * s.width() + ox),
                            static_cast<size_t>(vc) * 4);
        for (int b = 0; b < kOpticalBands; ++b)
            for (int y = 0; y < vc; ++y)
                std::memcpy(gt.data() + (static_cast<size_t>(b) * vc + y) * vc,
                            s.opt_clear.data() + b * plane + (static_cast<size_t>(oy + y) * s.width() + ox),
                            static_cast<size_t>(vc) * 4);
        for (int y = 0; y < vc; ++y)
            std::memcpy(truth.data() + static_cast<size_t>(y) * vc,
                        s.labels.data() + static_cast<size_t>(oy + y) * s.width() + ox, vc);

        Tape<float> tape;
        auto out = net_->forward(tape, tape.leaf(ic), tape.leaf(is), with_seg);
        m.psnr += cap_psnr(psnr(out.restored->val, gt));
        m.ssim += ssim_metric(out.restored->val, gt);
        if (with_seg) accumulate_confusion(confusion, argmax_channel(out.seg_logits->val), truth, net_cfg_.num_classes);
    }
    m.psnr /= n;
    m.ssim /= n;
    m.scenes = n;
    if (with_seg && !confusion.empty()) {
        SegMetrics sm = seg_metrics_from_confusion(confusion, net_cfg_.num_classes);
        m.pixel_acc = sm.pixel_acc;
        m.miou = sm.miou;
    }
    return m;
}

TrainResult Trainer::run() {
    TrainResult res;
    res.best_checkpoint = (fs::path(cfg_.out_dir) / "best.ckpt").string();
    res.last_checkpoint = (fs::path(cfg_.out_dir) / "last.ckpt").string();
    double best = best_restored_;
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&]() { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    CheckpointMeta meta;
    meta.phase = cfg_.phase;
    meta.seed = cfg_.seed;
    meta.freeze = freeze_policy_name(cfg_.freeze);

    auto run_validation = [&](int64_t step, double loss_now) {
        ValMetrics v = validate();
        const double metric = cfg_.phase == 2 ? v.miou : v.psnr;
        log_line(strf("val step=%lld phase=%d psnr=%.4f ssim=%.5f pa=%.4f miou=%.4f loss=%.6f wall=%.1f",
                      static_cast<long long>(step), cfg_.phase, v.psnr, v.ssim, v.pixel_acc, v.miou, loss_now,
                      wall()));
        if (metric > best) {
            best = metric;
            meta.step = step;
            save_checkpoint(res.best_checkpoint, *net_, meta);
        }
        res.final_val = v;
        return v;
    };

    double loss = 0.0;
    for (int64_t step = start_step_; step < cfg_.steps; ++step) {
        const double lr = lr_at(step);
        loss = train_step(step, lr);
        if (step % 10 == 0 || step + 1 == cfg_.steps)
            log_line(strf("step=%lld phase=%d loss=%.6f lr=%.4e wall=%.1f", static_cast<long long>(step), cfg_.phase,
                          loss, lr, wall()));
        if (cfg_.val_every > 0 && ((step + 1) % cfg_.val_every == 0 || step + 1 == cfg_.steps))
            run_validation(step + 1, loss);
    }
    if (cfg_.steps == 0 || cfg_.val_every <= 0) run_validation(cfg_.steps, loss);
    if (best == -1.0) {  // no validation improved (e.g. empty val split)
        meta.step = cfg_.steps;
        save_checkpoint(res.best_checkpoint, *net_, meta);
    }

    meta.step = cfg_.steps;
    auto extras = opt_->state();
    Tensor<float> bm({1});
    bm[0] = static_cast<float>(best);
    extras["trainer.best_metric"] = bm;
    save_checkpoint(res.last_checkpoint, *net_, meta, extras);
    res.best_metric = best;
    res.last_loss = loss;
    res.steps_run = cfg_.steps - start_step_;
    return res;
}

// ------------------------------- ablation ----------------------------------

std::vector<AblationRow> run_ablation(const NetworkConfig& net_cfg, const TrainConfig& base, const Dataset& data,
                                      const AblationBudget& budget, const std::string& out_dir) {
    struct RowSpec {
        const char* name;
        BranchMode branch;
        bool pretrain;
        FreezePolicy policy;
    };
    const RowSpec rows[] = {
        {"global_only", BranchMode::global_only, true, FreezePolicy::peft},
        {"local_only", BranchMode::local_only, true, FreezePolicy::peft},
        {"joint_training", BranchMode::both, false, FreezePolicy::none},
        {"cr_pretrain_fpft", BranchMode::both, true, FreezePolicy::fpft},
        {"cr_pretrain_peft", BranchMode::both, true, FreezePolicy::peft},
    };
    std::vector<AblationRow> out;
    // phase-1 checkpoints are shared across rows with the same branch mode
    std::map<std::string, std::string> phase1_ckpts;
    for (const auto& row : rows) {
        AblationRow r;
        r.name = row.name;
        try {
            NetworkConfig ncfg = net_cfg;
            ncfg.branch = row.branch;
            const std::string row_dir = (fs::path(out_dir) / row.name).string();
            std::string p1;
            if (row.pretrain) {
                const std::string key = branch_mode_name(row.branch);
                auto it = phase1_ckpts.find(key);
                if (it == phase1_ckpts.end()) {
                    TrainConfig c1 = base;
                    c1.phase = 1;
                    c1.freeze = FreezePolicy::none;
                    c1.steps = budget.phase1_steps;
                    c1.out_dir = (fs::path(out_dir) / ("phase1_" + key)).string();
                    c1.init_checkpoint.clear();
                    Trainer t1(ncfg, c1, data);
                    p1 = t1.run().best_checkpoint;
                    phase1_ckpts[key] = p1;
                } else {
                    p1 = it->second;
                }
            }
            TrainConfig c2 = base;
            c2.phase = 2;
            c2.freeze = row.policy;
            c2.steps = row.pretrain ? budget.phase2_steps : budget.phase1_steps + budget.phase2_steps;
            c2.out_dir = row_dir;
            c2.init_checkpoint = p1;
            Trainer t2(ncfg, c2, data);
            auto tr = t2.run();

            TdpcrNetwork<float> net(ncfg, base.seed);
            load_checkpoint(tr.best_checkpoint, net);
            EvalResult ev = evaluate(net, data, "test", EvalMode::full);
            r.psnr = ev.psnr;
            r.ssim = ev.ssim;
            r.pixel_acc = ev.pixel_acc;
            r.miou = ev.miou;
            r.ok = true;
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();  // row failures propagate into the report, matrix continues
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::string s = strf("%-20s %8s %8s %8s %8s\n", "configuration", "PSNR", "SSIM", "PA", "mIoU");
    for (const auto& r : rows) {
        if (r.ok)
            s += strf("%-20s %8.2f %8.4f %8.2f %8.2f\n", r.name.c_str(), r.psnr, r.ssim, 100.0 * r.pixel_acc,
                      100.0 * r.miou);
        else
            s += strf("%-20s FAILED: %s\n", r.name.c_str(), r.error.c_str());
    }
    return s;
}

}  // namespace tdpcr
