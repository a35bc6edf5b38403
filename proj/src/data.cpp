#include "tdpcr/data.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tdpcr/rng.hpp"
#include "tdpcr/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tdpcr {

static_assert(std::endian::native == std::endian::little, "sample format assumes a little-endian host");

namespace {

// Per-class 13-band mean reflectance. Classes 1 and 2 share nearly the same
// radar backscatter (below) but differ optically, so segmentation genuinely
// needs the optical stream where it is clear.
constexpr float kSpectra[6][kOpticalBands] = {
    {0.12f, 0.15f, 0.18f, 0.16f, 0.10f, 0.08f, 0.07f, 0.06f, 0.05f, 0.05f, 0.04f, 0.03f, 0.03f},  // water
    {0.06f, 0.08f, 0.12f, 0.10f, 0.16f, 0.35f, 0.45f, 0.50f, 0.52f, 0.50f, 0.30f, 0.22f, 0.12f},  // grass
    {0.10f, 0.14f, 0.22f, 0.26f, 0.32f, 0.44f, 0.50f, 0.54f, 0.56f, 0.53f, 0.44f, 0.37f, 0.27f},  // crops
    {0.04f, 0.05f, 0.07f, 0.06f, 0.09f, 0.28f, 0.38f, 0.42f, 0.45f, 0.44f, 0.22f, 0.14f, 0.08f},  // forest
    {0.28f, 0.30f, 0.32f, 0.34f, 0.36f, 0.38f, 0.39f, 0.40f, 0.41f, 0.40f, 0.42f, 0.44f, 0.43f},  // urban
    {0.18f, 0.22f, 0.26f, 0.30f, 0.34f, 0.38f, 0.40f, 0.42f, 0.44f, 0.46f, 0.52f, 0.55f, 0.50f},  // soil
};

constexpr float kBackscatter[6][kSarBands] = {
    {0.04f, 0.02f}, {0.30f, 0.12f}, {0.31f, 0.13f}, {0.45f, 0.30f}, {0.80f, 0.55f}, {0.22f, 0.08f},
};

constexpr float kCloudSpectrum[kOpticalBands] = {0.92f, 0.93f, 0.94f, 0.94f, 0.93f, 0.92f, 0.92f,
                                                 0.91f, 0.90f, 0.90f, 0.88f, 0.86f, 0.85f};

// Multi-octave value noise, min-max normalized to [0,1].
Tensor<float> noise_field(Rng stream, int h, int w, int base_cells, int octaves, double persistence) {
    Tensor<float> f({h, w});
    double amp = 1.0;
    for (int o = 0; o < octaves; ++o) {
        const int cells = base_cells << o;
        std::vector<float> grid(static_cast<size_t>(cells + 1) * (cells + 1));
        Rng g = stream.stream(static_cast<uint64_t>(o));
        for (auto& v : grid) v = static_cast<float>(g.uniform());
        for (int y = 0; y < h; ++y) {
            const double fy = static_cast<double>(y) * cells / h;
            const int y0 = static_cast<int>(fy);
            const float ty = static_cast<float>(fy - y0);
            const float* r0 = grid.data() + static_cast<size_t>(y0) * (cells + 1);
            const float* r1 = grid.data() + static_cast<size_t>(std::min(y0 + 1, cells)) * (cells + 1);
            float* dst = f.data() + static_cast<size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const double fx = static_cast<double>(x) * cells / w;
                const int x0 = static_cast<int>(fx);
                const float tx = static_cast<float>(fx - x0);
                const int x1 = std::min(x0 + 1, cells);
                const float top = r0[x0] + tx * (r0[x1] - r0[x0]);
                const float bot = r1[x0] + tx * (r1[x1] - r1[x0]);
                dst[x] += static_cast<float>(amp) * (top + ty * (bot - top));
            }
        }
        amp *= persistence;
    }
    float lo = f[0], hi = f[0];
    for (size_t i = 0; i < f.size(); ++i) {
        lo = std::min(lo, f[i]);
        hi = std::max(hi, f[i]);
    }
    const float scale = hi > lo ? 1.0f / (hi - lo) : 0.0f;
    for (size_t i = 0; i < f.size(); ++i) f[i] = (f[i] - lo) * scale;
    return f;
}

float quantile_of(const Tensor<float>& f, double q) {
    std::vector<float> v(f.data(), f.data() + f.size());
    size_t k = static_cast<size_t>(std::clamp(q, 0.0, 1.0) * (v.size() - 1));
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

constexpr float kAlphaFloor = 1e-4f;

}  // namespace

SampleRecord generate_scene(const SceneSpec& spec) {
    spec.validate();
    const int H = spec.height, W = spec.width, K = spec.num_classes;
    const size_t plane = static_cast<size_t>(H) * W;
    Rng root(spec.seed);

    SampleRecord rec;
    rec.seed = spec.seed;
    rec.coverage = spec.cloud_coverage;
    rec.labels = Tensor<uint8_t>({H, W});
    rec.opt_clear = Tensor<float>({kOpticalBands, H, W});
    rec.opt_cloudy = Tensor<float>({kOpticalBands, H, W});
    rec.sar = Tensor<float>({kSarBands, H, W});
    rec.cloud_alpha = Tensor<float>({H, W});

    // ---- label map: argmax over K smoothed random fields
    std::vector<Tensor<float>> fields;
    for (int k = 0; k < K; ++k) fields.push_back(noise_field(root.stream("labels").stream(k), H, W, 3, 3, 0.5));
    for (size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (fields[k][i] > fields[best][i]) best = k;
        rec.labels[i] = static_cast<uint8_t>(best);
    }

    // ---- clear optical: class spectrum + band-correlated texture
    float spectra[6][kOpticalBands];
    {
        Rng js = root.stream("spectra");
        for (int k = 0; k < K; ++k)
            for (int b = 0; b < kOpticalBands; ++b)
                spectra[k][b] = kSpectra[k][b] + static_cast<float>(js.uniform(-0.03, 0.03));
    }
    Tensor<float> tex_shared = noise_field(root.stream("texture"), H, W, 16, 2, 0.5);
    for (int b = 0; b < kOpticalBands; ++b) {
        Tensor<float> tex_band = noise_field(root.stream("texture_band").stream(b), H, W, 32, 1, 0.5);
        float* dst = rec.opt_clear.data() + static_cast<size_t>(b) * plane;
        for (size_t i = 0; i < plane; ++i) {
            const float base = spectra[rec.labels[i]][b];
            const float v = base + 0.10f * (tex_shared[i] - 0.5f) + 0.04f * (tex_band[i] - 0.5f);
            dst[i] = std::clamp(v, 0.0f, 1.0f);
        }
    }

    // ---- SAR: class backscatter x multiplicative gamma speckle (mean 1),
    // log-compressed, per-band min-max. Depends only on (labels, seed).
    {
        Rng sr = root.stream("sar");
        for (int p = 0; p < kSarBands; ++p) {
            float* dst = rec.sar.data() + static_cast<size_t>(p) * plane;
            for (size_t i = 0; i < plane; ++i) {
                const double speckle = sr.gamma(spec.speckle_looks) / spec.speckle_looks;
                const double raw = kBackscatter[rec.labels[i]][p] * speckle;
                dst[i] = static_cast<float>(std::log(raw + 1e-4));
            }
            float lo = dst[0], hi = dst[0];
            for (size_t i = 0; i < plane; ++i) {
                lo = std::min(lo, dst[i]);
                hi = std::max(hi, dst[i]);
            }
            const float scale = hi > lo ? 1.0f / (hi - lo) : 0.0f;
            for (size_t i = 0; i < plane; ++i) dst[i] = (dst[i] - lo) * scale;
        }
    }

    // ---- cloud thickness field hitting the requested coverage
    Tensor<float> alpha({H, W});
    if (spec.cloud_coverage > 0.0) {
        Tensor<float> cn = noise_field(root.stream("cloud"), H, W, 4, 4, 0.55);
        const double c = spec.cloud_coverage;
        const float t = quantile_of(cn, 1.0 - c);
        // opaque-core fraction grows superlinearly so full cover means a
        // mostly saturated field (the clear scene must not leak through)
        const float core = quantile_of(cn, 1.0 - c * (0.40 + 0.60 * c * c));
        const float denom = std::max(core - t, 1e-6f);
        for (size_t i = 0; i < plane; ++i) {
            float a = (cn[i] - t) / denom;
            a = a <= 0.0f ? 0.0f : std::pow(std::min(a, 1.0f), 0.45f);
            alpha[i] = a < kAlphaFloor ? 0.0f : a;
        }
    }

    // shadow band: darkening offset from the thick-cloud core, folded into
    // the recorded degradation thickness so clear-region identity stays exact
    Tensor<float> shadow({H, W});
    if (spec.shadows && spec.cloud_coverage > 0.0) {
        const int dy = std::max(2, H / 32), dx = std::max(2, W / 32);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = y - dy, sx = x - dx;
                float v = 0.0f;
                if (sy >= 0 && sx >= 0 && alpha[static_cast<size_t>(y) * W + x] > 0.0f) {
                    const float src = alpha[static_cast<size_t>(sy) * W + sx];
                    if (src > 0.30f) v = 0.45f * src;
                }
                shadow[static_cast<size_t>(y) * W + x] = v < kAlphaFloor ? 0.0f : v;
            }
    }

    // ---- composite cloudy optical
    Tensor<float> haze = noise_field(root.stream("haze"), H, W, 16, 3, 0.55);
    for (size_t i = 0; i < plane; ++i) {
        const float a = alpha[i];
        const float sa = shadow[i];
        const float total = 1.0f - (1.0f - a) * (1.0f - 0.75f * sa);
        rec.cloud_alpha[i] = total;
        for (int b = 0; b < kOpticalBands; ++b) {
            const size_t idx = static_cast<size_t>(b) * plane + i;
            if (total == 0.0f) {
                rec.opt_cloudy[idx] = rec.opt_clear[idx];  // exact clear-region identity
                continue;
            }
            float v = rec.opt_clear[idx];
            if (sa > 0.0f) v *= (1.0f - 0.75f * sa);
            if (a > 0.0f) {
                const float cloud_col = kCloudSpectrum[b] * (0.75f + 0.25f * haze[i]);
                v = (1.0f - a) * v + a * cloud_col;
            }
            rec.opt_cloudy[idx] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return rec;
}

SampleRecord augment(const SampleRecord& s, uint64_t seed, int crop_h, int crop_w) {
    const int H = s.height(), W = s.width();
    if (crop_h <= 0 || crop_w <= 0 || crop_h > H || crop_w > W)
        throw ArgumentError(strf("augment: crop %dx%d outside image %dx%d", crop_h, crop_w, H, W));
    Rng rng = Rng(seed).stream("augment");
    const int oy = static_cast<int>(rng.uniform_int(H - crop_h + 1));
    const int ox = static_cast<int>(rng.uniform_int(W - crop_w + 1));
    const bool flip_h = rng.uniform() < 0.5;
    const bool flip_v = rng.uniform() < 0.5;

    auto map_y = [&](int y) { return oy + (flip_v ? crop_h - 1 - y : y); };
    auto map_x = [&](int x) { return ox + (flip_h ? crop_w - 1 - x : x); };

    SampleRecord out;
    out.seed = s.seed;
    out.coverage = s.coverage;
    auto crop_f = [&](const Tensor<float>& src, int bands) {
        Tensor<float> dst(bands > 1 ? std::vector<int>{bands, crop_h, crop_w} : std::vector<int>{crop_h, crop_w});
        for (int b = 0; b < bands; ++b)
            for (int y = 0; y < crop_h; ++y)
                for (int x = 0; x < crop_w; ++x)
                    dst[(static_cast<size_t>(b) * crop_h + y) * crop_w + x] =
                        src[(static_cast<size_t>(b) * H + map_y(y)) * W + map_x(x)];
        return dst;
    };
    out.opt_cloudy = crop_f(s.opt_cloudy, kOpticalBands);
    out.sar = crop_f(s.sar, kSarBands);
    out.opt_clear = crop_f(s.opt_clear, kOpticalBands);
    out.cloud_alpha = crop_f(s.cloud_alpha, 1);
    out.labels = Tensor<uint8_t>({crop_h, crop_w});
    for (int y = 0; y < crop_h; ++y)
        for (int x = 0; x < crop_w; ++x)
            out.labels[static_cast<size_t>(y) * crop_w + x] = s.labels[static_cast<size_t>(map_y(y)) * W + map_x(x)];
    return out;
}

// ------------------------------- sample io ---------------------------------

namespace {

struct ArrayInfo {
    const char* file;
    const char* dtype;
    std::vector<int> shape;
    const void* data;
    size_t bytes;
};

std::vector<ArrayInfo> array_table(const SampleRecord& s) {
    return {
        {"opt_cloudy.raw", "float32", s.opt_cloudy.shape(), s.opt_cloudy.data(), s.opt_cloudy.size() * 4},
        {"sar.raw", "float32", s.sar.shape(), s.sar.data(), s.sar.size() * 4},
        {"opt_clear.raw", "float32", s.opt_clear.shape(), s.opt_clear.data(), s.opt_clear.size() * 4},
        {"labels.raw", "uint8", s.labels.shape(), s.labels.data(), s.labels.size()},
        {"cloud_alpha.raw", "float32", s.cloud_alpha.shape(), s.cloud_alpha.data(), s.cloud_alpha.size() * 4},
    };
}

void write_binary(const fs::path& p, const void* data, size_t bytes) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + p.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw DataError("short write: " + p.string());
}

std::vector<char> read_binary(const fs::path& p) {
    std::ifstream f(p, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cannot open: " + p.string());
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<size_t>(n));
    f.read(buf.data(), n);
    if (!f) throw DataError("short read: " + p.string());
    return buf;
}

}  // namespace

void write_sample(const SampleRecord& s, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = s.seed;
    manifest["coverage"] = s.coverage;
    manifest["endianness"] = "little";
    json arrays = json::object();
    for (const auto& a : array_table(s)) {
        arrays[std::string(a.file).substr(0, std::string(a.file).find('.'))] = {
            {"file", a.file}, {"dtype", a.dtype}, {"shape", a.shape}};
        write_binary(fs::path(dir) / a.file, a.data, a.bytes);
    }
    manifest["arrays"] = arrays;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw DataError("cannot write manifest in " + dir);
}

SampleRecord read_sample(const std::string& dir) {
    json manifest;
    {
        std::ifstream mf(fs::path(dir) / "manifest.json");
        if (!mf) throw DataError("missing manifest.json in " + dir);
        try {
            mf >> manifest;
        } catch (const json::exception& e) {
            throw DataError(strf("corrupted manifest in %s: %s", dir.c_str(), e.what()));
        }
    }
    SampleRecord s;
    try {
        if (manifest.at("schema_version").get<int>() != 1) throw DataError("unsupported sample schema version");
        const std::string endian = manifest.at("endianness").get<std::string>();
        if (endian != "little" && endian != "big") throw DataError("unknown endianness: " + endian);
        const bool swap = endian == "big";
        s.seed = manifest.at("seed").get<uint64_t>();
        s.coverage = manifest.at("coverage").get<double>();
        const auto& arrays = manifest.at("arrays");

        auto load_f32 = [&](const char* key) {
            const auto& e = arrays.at(key);
            if (e.at("dtype").get<std::string>() != "float32") throw DataError(strf("%s: expected float32", key));
            const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
            auto buf = read_binary(fs::path(dir) / e.at("file").get<std::string>());
            Tensor<float> t(shape);
            if (buf.size() != t.size() * 4) throw DataError(strf("%s: size mismatch", key));
            std::memcpy(t.data(), buf.data(), buf.size());
            if (swap) {
                auto* u = reinterpret_cast<uint32_t*>(t.data());
                for (size_t i = 0; i < t.size(); ++i) u[i] = __builtin_bswap32(u[i]);
            }
            return t;
        };
        auto load_u8 = [&](const char* key) {
            const auto& e = arrays.at(key);
            if (e.at("dtype").get<std::string>() != "uint8") throw DataError(strf("%s: expected uint8", key));
            const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
            auto buf = read_binary(fs::path(dir) / e.at("file").get<std::string>());
            Tensor<uint8_t> t(shape);
            if (buf.size() != t.size()) throw DataError(strf("%s: size mismatch", key));
            std::memcpy(t.data(), buf.data(), buf.size());
            return t;
        };
        s.opt_cloudy = load_f32("opt_cloudy");
        s.sar = load_f32("sar");
        s.opt_clear = load_f32("opt_clear");
        s.labels = load_u8("labels");
        s.cloud_alpha = load_f32("cloud_alpha");
    } catch (const json::exception& e) {
        throw DataError(strf("corrupted manifest in %s: %s", dir.c_str(), e.what()));
    }
    if (s.opt_cloudy.ndim() != 3 || s.opt_cloudy.dim(0) != kOpticalBands || !s.opt_cloudy.same_shape(s.opt_clear) ||
        s.sar.ndim() != 3 || s.sar.dim(0) != kSarBands)
        throw DataError("sample arrays have inconsistent shapes in " + dir);
    return s;
}

// ------------------------------- dataset -----------------------------------

std::vector<uint64_t> split_seeds(const DatasetSpec& spec, const std::string& split) {
    spec.validate();
    uint64_t offset;
    int count;
    if (split == "train") {
        offset = 0;
        count = spec.train_count;
    } else if (split == "val") {
        offset = 1000000;
        count = spec.val_count;
    } else if (split == "test") {
        offset = 2000000;
        count = spec.test_count;
    } else {
        throw ArgumentError("unknown split: " + split);
    }
    std::vector<uint64_t> seeds(count);
    for (int i = 0; i < count; ++i) seeds[i] = spec.base_seed + offset + static_cast<uint64_t>(i);
    return seeds;
}

double coverage_for_seed(const DatasetSpec& spec, uint64_t seed) {
    return Rng(seed).stream("coverage").uniform(spec.coverage_min, spec.coverage_max);
}

SceneSpec scene_spec_for_seed(const DatasetSpec& spec, uint64_t seed) {
    SceneSpec sc;
    sc.seed = seed;
    sc.height = spec.height;
    sc.width = spec.width;
    sc.num_classes = spec.num_classes;
    sc.cloud_coverage = coverage_for_seed(spec, seed);
    sc.speckle_looks = spec.speckle_looks;
    sc.shadows = spec.shadows;
    return sc;
}

namespace {

std::string sample_dirname(uint64_t seed) { return strf("sample_%08llu", static_cast<unsigned long long>(seed)); }

}  // namespace

void generate_dataset(const DatasetSpec& spec, const std::string& root) {
    spec.validate();
    fs::create_directories(root);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["spec"] = dataset_spec_to_json(spec);
    json splits = json::object();
    for (const char* split : {"train", "val", "test"}) {
        auto seeds = split_seeds(spec, split);
        splits[split] = seeds;
        fs::create_directories(fs::path(root) / split);
        const int64_t n = static_cast<int64_t>(seeds.size());
#pragma omp parallel for schedule(dynamic)
        for (int64_t i = 0; i < n; ++i) {
            SampleRecord rec = generate_scene(scene_spec_for_seed(spec, seeds[i]));
            write_sample(rec, (fs::path(root) / split / sample_dirname(seeds[i])).string());
        }
    }
    manifest["splits"] = splits;
    std::ofstream mf(fs::path(root) / "dataset.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw DataError("cannot write dataset.json in " + root);
}

Dataset::Dataset(const std::string& root) : root_(root) {
    json manifest;
    std::ifstream mf(fs::path(root) / "dataset.json");
    if (!mf) throw DataError("missing dataset.json in " + root);
    try {
        mf >> manifest;
        spec_ = dataset_spec_from_json(manifest.at("spec"));
        train_ = manifest.at("splits").at("train").get<std::vector<uint64_t>>();
        val_ = manifest.at("splits").at("val").get<std::vector<uint64_t>>();
        test_ = manifest.at("splits").at("test").get<std::vector<uint64_t>>();
    } catch (const json::exception& e) {
        throw DataError(strf("corrupted dataset.json in %s: %s", root.c_str(), e.what()));
    }
}

const std::vector<uint64_t>& Dataset::seeds(const std::string& split) const {
    if (split == "train") return train_;
    if (split == "val") return val_;
    if (split == "test") return test_;
    throw ArgumentError("unknown split: " + split);
}

int Dataset::count(const std::string& split) const { return static_cast<int>(seeds(split).size()); }

std::string Dataset::sample_dir(const std::string& split, int idx) const {
    const auto& s = seeds(split);
    if (idx < 0 || idx >= static_cast<int>(s.size())) throw ArgumentError("sample index out of range");
    return (fs::path(root_) / split / sample_dirname(s[idx])).string();
}

SampleRecord Dataset::load(const std::string& split, int idx) const { return read_sample(sample_dir(split, idx)); }

}  // namespace tdpcr
