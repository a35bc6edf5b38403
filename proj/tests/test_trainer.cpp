#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "tdpcr/checkpoint.hpp"
#include "tdpcr/eval.hpp"
#include "tdpcr/trainer.hpp"

using namespace tdpcr;
namespace fs = std::filesystem;

namespace {

// 8-scene 32x32 dataset shared by the whole binary.
const Dataset& fixture() {
    static std::string root = [] {
        fs::path p = fs::temp_directory_path() / "tdpcr_test" / "train_fixture";
        fs::remove_all(p);
        DatasetSpec spec;
        spec.height = spec.width = 32;
        spec.train_count = 8;
        spec.val_count = 2;
        spec.test_count = 2;
        spec.num_classes = 6;
        generate_dataset(spec, p.string());
        return p.string();
    }();
    static Dataset ds(root);
    return ds;
}

NetworkConfig tiny_net() {
    NetworkConfig cfg;
    cfg.stage_channels = {8, 16, 32, 64};
    cfg.naf_depths = {1, 1, 1, 1};
    cfg.seg_unified_channels = 8;
    return cfg;
}

TrainConfig base_cfg(const char* name) {
    TrainConfig cfg;
    cfg.steps = 4;
    cfg.batch = 2;
    cfg.crop = 16;
    cfg.val_every = 0;
    cfg.val_scenes = 2;
    cfg.val_crop = 32;
    cfg.seed = 7;
    cfg.out_dir = (fs::temp_directory_path() / "tdpcr_test" / "runs" / name).string();
    fs::remove_all(cfg.out_dir);
    return cfg;
}

std::map<std::string, uint64_t> group_checksums(const ParamStore<float>& st) {
    std::map<std::string, uint64_t> sums;
    for (const auto& p : st.all()) {
        uint64_t h = 1469598103934665603ull;
        const auto* bytes = reinterpret_cast<const uint8_t*>(p->value.val.data());
        for (size_t i = 0; i < p->size() * 4; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
        sums[p->group] ^= h;
    }
    return sums;
}

}  // namespace

TEST_CASE("step-0 loss of the identity-initialized network equals the direct reconstruction loss") {
    auto cfg = base_cfg("step0");
    Trainer t(tiny_net(), cfg, fixture());
    Batch b = t.make_batch(0);
    const double l0 = t.eval_loss(b);
    // identity at init: restored == cloudy input, so the loss is L_rec(I_c, I_gt)
    Tape<float> tp;
    LossWeights w;
    const double direct = rec_loss(tp, tp.leaf(b.ic), tp.leaf(b.gt), w)->val[0];
    CHECK(rel_err(l0, direct) < 1e-6);
    CHECK(l0 > 0.0);
}

TEST_CASE("same seed, same dataset: identical loss trajectories") {
    auto cfg = base_cfg("det1");
    Trainer a(tiny_net(), cfg, fixture());
    auto cfg2 = base_cfg("det2");
    cfg2.seed = cfg.seed;
    Trainer b(tiny_net(), cfg2, fixture());
    for (int64_t s = 0; s < 3; ++s) {
        const double la = a.train_step(s, 1e-3);
        const double lb = b.train_step(s, 1e-3);
        REQUIRE(la == lb);  // same binary, same thread count: bitwise
    }
}

TEST_CASE("batch order covers each sample once per epoch") {
    auto cfg = base_cfg("order");
    cfg.batch = 4;
    Trainer t(tiny_net(), cfg, fixture());
    std::set<int> seen;
    for (int64_t s = 0; s < 2; ++s)
        for (int i : t.batch_indices(s)) seen.insert(i);
    CHECK(seen.size() == 8);  // 2 steps x batch 4 = one full epoch, no repeats
}

TEST_CASE("optimizer state exists only for trainable parameters") {
    auto cfg = base_cfg("slots");
    cfg.phase = 2;
    cfg.freeze = FreezePolicy::peft;
    // phase 2 wants a phase-1 checkpoint: make one by running 0 steps
    auto p1cfg = base_cfg("slots_p1");
    p1cfg.steps = 0;
    Trainer p1(tiny_net(), p1cfg, fixture());
    cfg.init_checkpoint = p1.run().best_checkpoint;

    Trainer t(tiny_net(), cfg, fixture());
    const auto& st = t.network().store();
    for (const auto& p : st.all()) CHECK(t.optimizer().has_slot(p->name) == p->trainable);

    const auto& fm = t.freeze_manifest();
    CHECK(!fm.trainable.at(groups::kOpticalEncoder));
    CHECK(!fm.trainable.at(groups::kSarEncoder));
    CHECK(!fm.trainable.at(groups::kSharedDecoder));
    CHECK(fm.trainable.at(groups::kPromptGenerator));
    CHECK(fm.trainable.at(groups::kPgfBlocks));
    CHECK(fm.trainable.at(groups::kSegHead));
}

TEST_CASE("phase 2 without a checkpoint is rejected unless joint training") {
    auto cfg = base_cfg("reqckpt");
    cfg.phase = 2;
    cfg.freeze = FreezePolicy::peft;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.freeze = FreezePolicy::none;  // joint-training ablation trains from scratch
    cfg.validate();
}

TEST_CASE("freeze contracts: peft, fpft, probe") {
    auto p1cfg = base_cfg("freeze_p1");
    p1cfg.steps = 2;
    Trainer p1(tiny_net(), p1cfg, fixture());
    const std::string ckpt = p1.run().best_checkpoint;

    auto run_phase2 = [&](FreezePolicy pol, const char* name) {
        auto cfg = base_cfg(name);
        cfg.phase = 2;
        cfg.freeze = pol;
        cfg.steps = 10;
        cfg.init_checkpoint = ckpt;
        Trainer t(tiny_net(), cfg, fixture());
        auto before = group_checksums(t.network().store());
        for (int64_t s = 0; s < 10; ++s) t.train_step(s, 5e-4);
        auto after = group_checksums(t.network().store());
        return std::make_pair(before, after);
    };

    {
        auto [before, after] = run_phase2(FreezePolicy::peft, "freeze_peft");
        CHECK(before.at(groups::kOpticalEncoder) == after.at(groups::kOpticalEncoder));
        CHECK(before.at(groups::kSarEncoder) == after.at(groups::kSarEncoder));
        CHECK(before.at(groups::kSharedDecoder) == after.at(groups::kSharedDecoder));
        CHECK(before.at(groups::kPgfBlocks) != after.at(groups::kPgfBlocks));
        CHECK(before.at(groups::kSegHead) != after.at(groups::kSegHead));
        CHECK(before.at(groups::kPromptGenerator) != after.at(groups::kPromptGenerator));
    }
    {
        auto [before, after] = run_phase2(FreezePolicy::fpft, "freeze_fpft");
        for (const auto& g : groups::kAll) {
            INFO("group ", g);
            CHECK(before.at(g) != after.at(g));
        }
    }
    {
        auto [before, after] = run_phase2(FreezePolicy::probe, "freeze_probe");
        for (const auto& g : groups::kAll) {
            if (g == groups::kSegHead)
                CHECK(before.at(g) != after.at(g));
            else
                CHECK(before.at(g) == after.at(g));
        }
    }
}

TEST_CASE("resume reproduces the uninterrupted run") {
    // constant lr so the schedule does not depend on the step budget
    auto mk = [&](const char* name, int steps) {
        auto cfg = base_cfg(name);
        cfg.steps = steps;
        cfg.lr = cfg.lr_min = 1e-4;
        cfg.val_scenes = 1;
        return cfg;
    };
    auto cfgA = mk("resumeA", 4);
    Trainer a(tiny_net(), cfgA, fixture());
    auto ra = a.run();

    auto cfgB = mk("resumeB", 8);
    cfgB.resume = ra.last_checkpoint;
    Trainer b(tiny_net(), cfgB, fixture());
    auto rb = b.run();

    auto cfgC = mk("resumeC", 8);
    Trainer c(tiny_net(), cfgC, fixture());
    auto rc = c.run();

    CHECK(rb.last_loss == doctest::Approx(rc.last_loss).epsilon(1e-7));
    CHECK(std::abs(rb.final_val.psnr - rc.final_val.psnr) < 1e-5);
    // parameters bitwise identical
    const auto& pb = b.network().store().all();
    const auto& pc = c.network().store().all();
    for (size_t i = 0; i < pb.size(); ++i)
        REQUIRE(std::memcmp(pb[i]->value.val.data(), pc[i]->value.val.data(), pb[i]->size() * 4) == 0);
}

TEST_CASE("non-finite loss aborts with a numeric error") {
    auto cfg = base_cfg("nan");
    Trainer t(tiny_net(), cfg, fixture());
    auto* p = t.network().store().find("shared_decoder/final.w");
    REQUIRE(p);
    p->value.val[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(t.train_step(0, 1e-4), NumericError);
}

TEST_CASE("training reduces the reconstruction loss on a tiny overfit") {
    auto cfg = base_cfg("descent");
    cfg.steps = 30;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.lr_min = 1e-4;
    Trainer t(tiny_net(), cfg, fixture());
    Batch probe = t.make_batch(0);
    const double before = t.eval_loss(probe);
    for (int64_t s = 0; s < 30; ++s) t.train_step(s, 5e-4);
    const double after = t.eval_loss(probe);
    MESSAGE("loss before ", before, " after ", after);
    CHECK(after < before);
}

TEST_CASE("evaluate modes report the right metric sets") {
    auto p1cfg = base_cfg("eval_p1");
    p1cfg.steps = 1;
    Trainer p1(tiny_net(), p1cfg, fixture());
    auto res = p1.run();
    NetworkConfig ncfg = tiny_net();
    ncfg.num_classes = fixture().spec().num_classes;
    TdpcrNetwork<float> net(ncfg, 1);
    load_checkpoint(res.best_checkpoint, net);

    auto full = evaluate(net, fixture(), "test", EvalMode::full);
    CHECK(full.scenes == 2);
    CHECK(full.psnr > 0.0);
    auto cr = evaluate(net, fixture(), "test", EvalMode::cr_only);
    auto recs = cr.records();
    for (const auto& r : recs) CHECK(r.name.find("miou") == std::string::npos);
    auto ds = evaluate(net, fixture(), "test", EvalMode::direct_seg);
    auto recs2 = ds.records();
    for (const auto& r : recs2) CHECK(r.name.find("psnr") == std::string::npos);

    // eval twice on the same checkpoint: identical metrics
    auto full2 = evaluate(net, fixture(), "test", EvalMode::full);
    CHECK(full.psnr == full2.psnr);
    CHECK(full.miou == full2.miou);
}

TEST_CASE("perfect prediction yields unit segmentation metrics end to end") {
    // ground truth used as prediction
    SampleRecord s = fixture().load("test", 0);
    Tensor<uint8_t> pred({1, s.height(), s.width()});
    std::memcpy(pred.data(), s.labels.data(), pred.size());
    Tensor<uint8_t> truth = pred;
    auto m = seg_metrics(pred, truth, 6);
    CHECK(m.pixel_acc == 1.0);
    CHECK(m.miou == 1.0);
}
