// Command-line front end: dataset generation, two-phase training,
// evaluation, the ablation matrix, and prompt visualization.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tdpcr/checkpoint.hpp"
#include "tdpcr/config.hpp"
#include "tdpcr/eval.hpp"
#include "tdpcr/trainer.hpp"
#include "tdpcr/viz.hpp"

namespace fs = std::filesystem;
using namespace tdpcr;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string ckpt;
    std::string sample;
    std::string pca_scope = "image";
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file (JSON)");
    cmd->add_option("--set", args.overrides, "override as dotted key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "run seed (overrides train.seed)");
    cmd->add_option("--ckpt", args.ckpt, "checkpoint path");
}

AppConfig resolve(const CommonArgs& args) {
    AppConfig cfg = load_app_config(args.config_path, args.overrides);
    if (args.seed >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed);
    return cfg;
}

void write_metrics_file(const std::string& dir, const std::vector<MetricRecord>& recs) {
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "metrics.txt");
    f << format_metric_records(recs);
    if (!f) throw DataError("cannot write metrics in " + dir);
}

int cmd_gen_data(const CommonArgs& args) {
    AppConfig cfg = resolve(args);
    const std::string root = args.out_dir.empty() ? cfg.data_root : args.out_dir;
    generate_dataset(cfg.data, root);
    write_config_echo(cfg, root);
    std::cout << "dataset written to " << root << " (train " << cfg.data.train_count << ", val "
              << cfg.data.val_count << ", test " << cfg.data.test_count << ")\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    AppConfig cfg = resolve(args);
    if (!args.out_dir.empty()) cfg.train.out_dir = args.out_dir;
    if (cfg.train.out_dir.empty()) cfg.train.out_dir = "runs/train";
    if (!args.ckpt.empty()) cfg.train.init_checkpoint = args.ckpt;
    write_config_echo(cfg, cfg.train.out_dir);
    Dataset data(cfg.data_root);
    Trainer trainer(cfg.network, cfg.train, data);
    TrainResult res = trainer.run();
    std::vector<MetricRecord> recs = {
        {"best_metric", res.best_metric, res.final_val.scenes},
        {"val_psnr", res.final_val.psnr, res.final_val.scenes},
        {"val_ssim", res.final_val.ssim, res.final_val.scenes},
    };
    if (cfg.train.phase == 2) {
        recs.push_back({"val_pixel_acc", res.final_val.pixel_acc, res.final_val.scenes});
        recs.push_back({"val_miou", res.final_val.miou, res.final_val.scenes});
    }
    write_metrics_file(cfg.train.out_dir, recs);
    std::cout << "training done; best checkpoint: " << res.best_checkpoint << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    AppConfig cfg = resolve(args);
    if (args.ckpt.empty()) throw ArgumentError("eval requires --ckpt");
    const std::string out = args.out_dir.empty() ? "runs/eval" : args.out_dir;
    write_config_echo(cfg, out);
    const EvalMode mode = eval_mode_from_string(cfg.eval.mode);

    CheckpointInfo info = peek_checkpoint(args.ckpt);
    TdpcrNetwork<float> net(info.config, cfg.train.seed);
    load_checkpoint(args.ckpt, net);
    Dataset data(cfg.data_root);
    EvalResult res = evaluate(net, data, cfg.eval.split, mode, cfg.eval.max_scenes);
    write_metrics_file(out, res.records());
    std::cout << format_metric_records(res.records());

    // side-by-side strips for the first few scenes
    const int nstrips = std::min(cfg.eval.max_strips, data.count(cfg.eval.split));
    for (int i = 0; i < nstrips; ++i) {
        SampleRecord s = data.load(cfg.eval.split, i);
        const int H = s.height(), W = s.width();
        Tensor<float> ic({1, kOpticalBands, H, W}), is({1, kSarBands, H, W});
        std::memcpy(ic.data(), s.opt_cloudy.data(), ic.size() * 4);
        std::memcpy(is.data(), s.sar.data(), is.size() * 4);
        Tape<float> tape;
        auto fwd = net.forward(tape, tape.leaf(ic), tape.leaf(is), mode != EvalMode::cr_only);
        Tensor<float> restored({kOpticalBands, H, W});
        std::memcpy(restored.data(), fwd.restored->val.data(), restored.size() * 4);
        Tensor<uint8_t> strip;
        if (mode == EvalMode::cr_only) {
            strip = hstack_rgb({optical_to_rgb(s.opt_cloudy), optical_to_rgb(restored), optical_to_rgb(s.opt_clear),
                                labels_to_rgb(s.labels)});
        } else {
            Tensor<uint8_t> pred3 = argmax_channel(fwd.seg_logits->val);
            Tensor<uint8_t> pred({H, W});
            std::memcpy(pred.data(), pred3.data(), pred.size());
            strip = compose_eval_strip(s, restored, pred);
        }
        write_ppm((fs::path(out) / strf("strip_%03d.ppm", i)).string(), strip);
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    AppConfig cfg = resolve(args);
    const std::string out = args.out_dir.empty() ? "runs/ablate" : args.out_dir;
    write_config_echo(cfg, out);
    Dataset data(cfg.data_root);
    AblationBudget budget{cfg.ablate.phase1_steps, cfg.ablate.phase2_steps};
    auto rows = run_ablation(cfg.network, cfg.train, data, budget, out);
    const std::string table = format_ablation_table(rows);
    std::cout << table;
    std::ofstream f(fs::path(out) / "ablation.txt");
    f << table;
    std::vector<MetricRecord> recs;
    for (const auto& r : rows)
        if (r.ok) {
            recs.push_back({r.name + ".psnr", r.psnr, 1});
            recs.push_back({r.name + ".ssim", r.ssim, 1});
            recs.push_back({r.name + ".pixel_acc", r.pixel_acc, 1});
            recs.push_back({r.name + ".miou", r.miou, 1});
        }
    write_metrics_file(out, recs);
    for (const auto& r : rows)
        if (!r.ok) return 1;
    return 0;
}

int cmd_viz_prompt(const CommonArgs& args) {
    AppConfig cfg = resolve(args);
    if (args.ckpt.empty()) throw ArgumentError("viz-prompt requires --ckpt");
    if (args.sample.empty()) throw ArgumentError("viz-prompt requires --sample DIR");
    const std::string out = args.out_dir.empty() ? "runs/viz" : args.out_dir;
    write_config_echo(cfg, out);

    CheckpointInfo info = peek_checkpoint(args.ckpt);
    TdpcrNetwork<float> net(info.config, cfg.train.seed);
    load_checkpoint(args.ckpt, net);

    SampleRecord s = read_sample(args.sample);
    const int H = s.height(), W = s.width();
    Tensor<float> ic({1, kOpticalBands, H, W});
    std::memcpy(ic.data(), s.opt_cloudy.data(), ic.size() * 4);
    Tape<float> tape;
    auto* pv = net.prompt_generator().forward(tape, tape.leaf(ic));
    Tensor<float> prompt({info.config.prompt_channels, H, W});
    std::memcpy(prompt.data(), pv->val.data(), prompt.size() * 4);

    PromptPca pca;
    if (args.pca_scope == "image") {
        pca = prompt_pca(prompt);
    } else if (args.pca_scope == "dataset") {
        Dataset data(cfg.data_root);
        const int n = std::min(16, data.count(cfg.eval.split));
        std::vector<Tensor<float>> prompts;
        for (int i = 0; i < n; ++i) {
            SampleRecord si = data.load(cfg.eval.split, i);
            Tensor<float> ici({1, kOpticalBands, si.height(), si.width()});
            std::memcpy(ici.data(), si.opt_cloudy.data(), ici.size() * 4);
            Tape<float> ti;
            auto* pi = net.prompt_generator().forward(ti, ti.leaf(ici));
            Tensor<float> pt({info.config.prompt_channels, si.height(), si.width()});
            std::memcpy(pt.data(), pi->val.data(), pt.size() * 4);
            prompts.push_back(std::move(pt));
        }
        std::vector<const Tensor<float>*> ptrs;
        for (const auto& p : prompts) ptrs.push_back(&p);
        PromptPca fit = fit_prompt_pca(ptrs);
        pca = fit;
        pca.rgb = pca_project_rgb(fit, prompt);
    } else {
        throw ArgumentError("--pca-scope must be image or dataset");
    }
    if (pca.degenerate) std::cerr << "warning: constant prompt, zero variance; writing mid-gray\n";

    Tensor<uint8_t> rgb8({H, W, 3});
    for (size_t i = 0; i < rgb8.size(); ++i)
        rgb8[i] = static_cast<uint8_t>(std::lround(255.0 * std::clamp(pca.rgb[i], 0.0f, 1.0f)));
    write_ppm((fs::path(out) / "prompt_pca.ppm").string(), rgb8);
    write_ppm((fs::path(out) / "prompt_panel.ppm").string(),
              hstack_rgb({optical_to_rgb(s.opt_cloudy), rgb8, gray_to_rgb(s.cloud_alpha)}));
    std::cout << "prompt visualization written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TDP-CR: prompt-guided SAR-optical cloud removal with joint segmentation"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, ablate_args, viz_args;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, gen_args);
    auto* train = app.add_subcommand("train", "run phase-1 or phase-2 training");
    add_common(train, train_args);
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_common(ev, eval_args);
    auto* ab = app.add_subcommand("ablate", "run the 5-row ablation matrix");
    add_common(ab, ablate_args);
    auto* viz = app.add_subcommand("viz-prompt", "PCA visualization of the degradation prompt");
    add_common(viz, viz_args);
    viz->add_option("--sample", viz_args.sample, "sample directory");
    viz->add_option("--pca-scope", viz_args.pca_scope, "PCA fitting scope: image|dataset");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (ev->parsed()) return cmd_eval(eval_args);
        if (ab->parsed()) return cmd_ablate(ablate_args);
        if (viz->parsed()) return cmd_viz_prompt(viz_args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
