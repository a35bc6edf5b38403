#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "tdpcr/config.hpp"
#include "tdpcr/rng.hpp"
#include "tdpcr/viz.hpp"

using namespace tdpcr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / "tdpcr_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
#ifdef TDPCR_CLI_PATH
    const std::string cmd = std::string(TDPCR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
#else
    (void)args;
    return -1;
#endif
}

}  // namespace

TEST_CASE("config defaults, file merge, overrides") {
    AppConfig def = load_app_config("", {});
    CHECK(def.train.lr == doctest::Approx(2e-4));
    CHECK(def.train.loss.lambda_ssim == doctest::Approx(0.1));
    CHECK(def.train.loss.lambda_rec == doctest::Approx(1.0));
    CHECK(def.train.loss.lambda_seg == doctest::Approx(1.0));
    CHECK(def.network.stage_channels == std::vector<int>{32, 64, 128, 256});
    CHECK(def.network.prompt_channels == 8);
    CHECK(def.data.train_count == 512);

    auto dir = fresh_dir("config");
    {
        std::ofstream f(dir / "c.json");
        f << R"({"train": {"lr": 0.001, "steps": 42}, "data": {"height": 64, "width": 64}})";
    }
    AppConfig c = load_app_config((dir / "c.json").string(), {"train.batch=4", "network.prompt_channels=16"});
    CHECK(c.train.lr == doctest::Approx(1e-3));
    CHECK(c.train.steps == 42);
    CHECK(c.train.batch == 4);
    CHECK(c.network.prompt_channels == 16);
    CHECK(c.data.height == 64);

    CHECK_THROWS_AS(load_app_config("", {"train.bogus=1"}), ArgumentError);
    CHECK_THROWS_AS(load_app_config("", {"nonsense"}), ArgumentError);
    {
        std::ofstream f(dir / "bad.json");
        f << R"({"unknown_section": {}})";
    }
    CHECK_THROWS_AS(load_app_config((dir / "bad.json").string(), {}), ArgumentError);
    {
        std::ofstream f(dir / "notjson.json");
        f << "{";
    }
    CHECK_THROWS_AS(load_app_config((dir / "notjson.json").string(), {}), ArgumentError);
}

TEST_CASE("resolved echo reloads to the same configuration") {
    AppConfig c = load_app_config("", {"train.steps=17", "data.num_classes=5", "network.branch=local_only"});
    auto dir = fresh_dir("echo");
    write_config_echo(c, dir.string());
    AppConfig back = load_app_config((dir / "config_resolved.json").string(), {});
    CHECK(back.train.steps == 17);
    CHECK(back.data.num_classes == 5);
    CHECK(back.network.branch == BranchMode::local_only);
    CHECK(app_config_json(back) == app_config_json(c));
}

TEST_CASE("ppm writer emits a valid P6 header and payload") {
    Tensor<uint8_t> img({2, 3, 3});
    for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<uint8_t>(i * 7);
    auto dir = fresh_dir("ppm");
    const std::string path = (dir / "x.ppm").string();
    write_ppm(path, img);
    std::ifstream f(path, std::ios::binary);
    std::string header;
    std::getline(f, header);
    CHECK(header == "P6");
    std::string dims;
    std::getline(f, dims);
    CHECK(dims == "3 2");
    std::string maxv;
    std::getline(f, maxv);
    CHECK(maxv == "255");
    std::vector<char> payload(img.size());
    f.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    CHECK(f.gcount() == static_cast<std::streamsize>(img.size()));
    CHECK(std::memcmp(payload.data(), img.data(), img.size()) == 0);
}

TEST_CASE("prompt PCA: reconstruction completeness and output shape") {
    const int C = 8, H = 12, W = 10;
    Rng rng(5);
    Tensor<float> prompt({C, H, W});
    // low-rank structure plus noise
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                prompt[(static_cast<size_t>(c) * H + y) * W + x] =
                    static_cast<float>(std::sin(0.3 * c + 0.2 * y) * x * 0.1 + 0.05 * rng.normal());
    PromptPca pca = prompt_pca(prompt);
    CHECK(!pca.degenerate);
    CHECK(pca.rgb.shape() == std::vector<int>{H, W, 3});
    for (size_t i = 0; i < pca.rgb.size(); ++i) {
        CHECK(pca.rgb[i] >= 0.0f);
        CHECK(pca.rgb[i] <= 1.0f);
    }
    // eigenvalues sorted descending
    for (int i = 1; i < C; ++i) CHECK(pca.eigenvalues[i] <= pca.eigenvalues[i - 1] + 1e-12);

    // completeness: centered data reconstructs from all C_p components
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; i += 13) {
        std::vector<double> coeff(C, 0.0);
        for (int comp = 0; comp < C; ++comp)
            for (int c = 0; c < C; ++c)
                coeff[comp] += (prompt[static_cast<size_t>(c) * plane + i] - pca.mean[c]) *
                               pca.components[static_cast<size_t>(comp) * C + c];
        for (int c = 0; c < C; ++c) {
            double rec = pca.mean[c];
            for (int comp = 0; comp < C; ++comp)
                rec += coeff[comp] * pca.components[static_cast<size_t>(comp) * C + c];
            CHECK(std::abs(rec - prompt[static_cast<size_t>(c) * plane + i]) < 1e-5);
        }
    }

    // constant prompt: degenerate guard gives mid-gray
    Tensor<float> flat = Tensor<float>::full({C, H, W}, 0.37f);
    PromptPca dg = prompt_pca(flat);
    CHECK(dg.degenerate);
    for (size_t i = 0; i < dg.rgb.size(); ++i) CHECK(dg.rgb[i] == 0.5f);

    // too few channels for RGB projection
    Tensor<float> narrow({2, H, W});
    CHECK_THROWS_AS(prompt_pca(narrow), ArgumentError);
}

TEST_CASE("dataset-scope PCA projects with pooled components") {
    Rng rng(9);
    std::vector<Tensor<float>> prompts;
    for (int n = 0; n < 3; ++n) {
        Tensor<float> p({4, 6, 6});
        for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(rng.normal());
        prompts.push_back(std::move(p));
    }
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& p : prompts) ptrs.push_back(&p);
    PromptPca fit = fit_prompt_pca(ptrs);
    CHECK(!fit.degenerate);
    auto rgb = pca_project_rgb(fit, prompts[0]);
    CHECK(rgb.shape() == std::vector<int>{6, 6, 3});
}

TEST_CASE("label palette and stacking") {
    Tensor<uint8_t> labels({2, 2});
    labels[0] = 0;
    labels[1] = 1;
    labels[2] = 2;
    labels[3] = 5;
    auto rgb = labels_to_rgb(labels);
    CHECK(rgb.shape() == std::vector<int>{2, 2, 3});
    auto stacked = hstack_rgb({rgb, rgb, rgb}, 1);
    CHECK(stacked.dim(1) == 2 * 3 + 2);

    Tensor<float> bands({13, 4, 4});
    bands.fill(0.3f);
    auto orgb = optical_to_rgb(bands);
    CHECK(orgb.dim(0) == 4);
    CHECK(orgb[0] == static_cast<uint8_t>(std::lround(255 * 0.6)));
}

#ifdef TDPCR_CLI_PATH
TEST_CASE("cli exit codes: success, config error, data error") {
    auto dir = fresh_dir("cliexit");
    const std::string ds = (dir / "ds").string();
    CHECK(run_cli("gen-data --out " + ds +
                  " --set data.height=32 --set data.width=32"
                  " --set data.train_count=2 --set data.val_count=1 --set data.test_count=1") == 0);
    // regeneration with the same config is bit-identical
    const std::string ds2 = (dir / "ds2").string();
    CHECK(run_cli("gen-data --out " + ds2 +
                  " --set data.height=32 --set data.width=32"
                  " --set data.train_count=2 --set data.val_count=1 --set data.test_count=1") == 0);
    auto file_bytes = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(file_bytes(fs::path(ds) / "train/sample_00001000/opt_cloudy.raw") ==
          file_bytes(fs::path(ds2) / "train/sample_00001000/opt_cloudy.raw"));

    CHECK(run_cli("train --set bogus.key=1") == 2);
    CHECK(run_cli("eval --out " + (dir / "e").string()) == 2);   // missing --ckpt
    CHECK(run_cli("nonexistent-command") == 2);
    setenv("TDPCR_DATA_DIR", (dir / "missing").c_str(), 1);
    CHECK(run_cli("train --out " + (dir / "r").string() + " --set train.steps=1") == 3);
    unsetenv("TDPCR_DATA_DIR");
}
#endif
