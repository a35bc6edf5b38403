#include "tdpcr/viz.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace tdpcr {

void write_ppm(const std::string& path, const Tensor<uint8_t>& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(2) != 3) throw ArgumentError("write_ppm: expect [H,W,3]");
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f << "P6\n" << rgb.dim(1) << " " << rgb.dim(0) << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!f) throw DataError("short write: " + path);
}

Tensor<uint8_t> optical_to_rgb(const Tensor<float>& bands, double gain) {
    if (bands.ndim() != 3 || bands.dim(0) < 4) throw ArgumentError("optical_to_rgb: expect [bands,H,W]");
    const int H = bands.dim(1), W = bands.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    const int rgb_bands[3] = {3, 2, 1};  // red, green, blue analogues
    Tensor<uint8_t> out({H, W, 3});
    for (int c = 0; c < 3; ++c) {
        const float* src = bands.data() + static_cast<size_t>(rgb_bands[c]) * plane;
        for (size_t i = 0; i < plane; ++i) {
            const double v = std::clamp(gain * src[i], 0.0, 1.0);
            out[i * 3 + c] = static_cast<uint8_t>(std::lround(255.0 * v));
        }
    }
    return out;
}

Tensor<uint8_t> labels_to_rgb(const Tensor<uint8_t>& labels) {
    static const uint8_t palette[7][3] = {
        {31, 119, 180}, {44, 160, 44}, {255, 215, 0}, {23, 80, 20}, {150, 150, 150}, {140, 86, 75}, {0, 0, 0},
    };
    if (labels.ndim() != 2) throw ArgumentError("labels_to_rgb: expect [H,W]");
    Tensor<uint8_t> out({labels.dim(0), labels.dim(1), 3});
    for (size_t i = 0; i < labels.size(); ++i) {
        const int k = labels[i] < 6 ? labels[i] : 6;
        out[i * 3 + 0] = palette[k][0];
        out[i * 3 + 1] = palette[k][1];
        out[i * 3 + 2] = palette[k][2];
    }
    return out;
}

Tensor<uint8_t> gray_to_rgb(const Tensor<float>& gray) {
    if (gray.ndim() != 2) throw ArgumentError("gray_to_rgb: expect [H,W]");
    Tensor<uint8_t> out({gray.dim(0), gray.dim(1), 3});
    for (size_t i = 0; i < gray.size(); ++i) {
        const uint8_t v = static_cast<uint8_t>(std::lround(255.0 * std::clamp(gray[i], 0.0f, 1.0f)));
        out[i * 3 + 0] = v;
        out[i * 3 + 1] = v;
        out[i * 3 + 2] = v;
    }
    return out;
}

Tensor<uint8_t> hstack_rgb(const std::vector<Tensor<uint8_t>>& panels, int gap) {
    if (panels.empty()) throw ArgumentError("hstack_rgb: no panels");
    const int H = panels[0].dim(0);
    int W = 0;
    for (const auto& p : panels) {
        if (p.dim(0) != H) throw ArgumentError("hstack_rgb: panel heights differ");
        W += p.dim(1);
    }
    W += gap * (static_cast<int>(panels.size()) - 1);
    Tensor<uint8_t> out({H, W, 3});
    out.fill(255);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int y = 0; y < H; ++y)
            std::memcpy(out.data() + (static_cast<size_t>(y) * W + x0) * 3,
                        p.data() + static_cast<size_t>(y) * p.dim(1) * 3, static_cast<size_t>(p.dim(1)) * 3);
        x0 += p.dim(1) + gap;
    }
    return out;
}

Tensor<uint8_t> compose_eval_strip(const SampleRecord& s, const Tensor<float>& restored,
                                   const Tensor<uint8_t>& predicted) {
    return hstack_rgb({optical_to_rgb(s.opt_cloudy), optical_to_rgb(restored), optical_to_rgb(s.opt_clear),
                       labels_to_rgb(s.labels), labels_to_rgb(predicted)});
}

namespace {

// Jacobi eigensolver for small symmetric matrices (row-major n x n).
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigval, std::vector<double>& eigvec) {
    eigvec.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvec[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-30) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - sn * akq;
                    a[static_cast<size_t>(k) * n + q] = sn * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - sn * aqk;
                    a[static_cast<size_t>(q) * n + k] = sn * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvec[static_cast<size_t>(k) * n + p];
                    const double vkq = eigvec[static_cast<size_t>(k) * n + q];
                    eigvec[static_cast<size_t>(k) * n + p] = c * vkp - sn * vkq;
                    eigvec[static_cast<size_t>(k) * n + q] = sn * vkp + c * vkq;
                }
            }
    }
    eigval.resize(n);
    for (int i = 0; i < n; ++i) eigval[i] = a[static_cast<size_t>(i) * n + i];
}

}  // namespace

PromptPca fit_prompt_pca(const std::vector<const Tensor<float>*>& prompts) {
    if (prompts.empty()) throw ArgumentError("fit_prompt_pca: no prompts");
    const int C = prompts[0]->dim(0);
    if (C < 3) throw ArgumentError(strf("prompt_pca: need at least 3 prompt channels, got %d", C));
    for (const auto* p : prompts)
        if (p->ndim() != 3 || p->dim(0) != C) throw ArgumentError("fit_prompt_pca: inconsistent prompt shapes");

    PromptPca res;
    res.mean = Tensor<float>({C});
    std::vector<double> mean(C, 0.0);
    size_t total = 0;
    for (const auto* p : prompts) {
        const size_t plane = static_cast<size_t>(p->dim(1)) * p->dim(2);
        for (int c = 0; c < C; ++c) {
            const float* src = p->data() + static_cast<size_t>(c) * plane;
            for (size_t i = 0; i < plane; ++i) mean[c] += src[i];
        }
        total += plane;
    }
    for (int c = 0; c < C; ++c) res.mean[c] = static_cast<float>(mean[c] / total);

    std::vector<double> cov(static_cast<size_t>(C) * C, 0.0);
    for (const auto* p : prompts) {
        const size_t plane = static_cast<size_t>(p->dim(1)) * p->dim(2);
        for (int a = 0; a < C; ++a)
            for (int b = a; b < C; ++b) {
                const float* pa = p->data() + static_cast<size_t>(a) * plane;
                const float* pb = p->data() + static_cast<size_t>(b) * plane;
                double acc = 0.0;
                for (size_t i = 0; i < plane; ++i)
                    acc += (static_cast<double>(pa[i]) - res.mean[a]) * (static_cast<double>(pb[i]) - res.mean[b]);
                cov[static_cast<size_t>(a) * C + b] += acc;
            }
    }
    for (int a = 0; a < C; ++a)
        for (int b = a; b < C; ++b)
            cov[static_cast<size_t>(b) * C + a] = cov[static_cast<size_t>(a) * C + b] =
                cov[static_cast<size_t>(a) * C + b] / total;

    double trace = 0.0;
    for (int c = 0; c < C; ++c) trace += cov[static_cast<size_t>(c) * C + c];
    res.components = Tensor<float>({C, C});
    if (trace < 1e-12) {  // constant prompt: zero-variance guard
        res.degenerate = true;
        res.eigenvalues.assign(C, 0.0);
        for (int c = 0; c < C; ++c) res.components[static_cast<size_t>(c) * C + c] = 1.0f;
        return res;
    }
    std::vector<double> work = cov, eigval, eigvec;
    jacobi_eigen(work, C, eigval, eigvec);
    std::vector<int> order(C);
    for (int i = 0; i < C; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return eigval[a] > eigval[b]; });
    res.eigenvalues.resize(C);
    for (int i = 0; i < C; ++i) {
        res.eigenvalues[i] = eigval[order[i]];
        for (int k = 0; k < C; ++k)
            res.components[static_cast<size_t>(i) * C + k] =
                static_cast<float>(eigvec[static_cast<size_t>(k) * C + order[i]]);
    }
    return res;
}

Tensor<float> pca_project_rgb(const PromptPca& fit, const Tensor<float>& prompt) {
    if (prompt.ndim() != 3) throw ArgumentError("pca_project_rgb: expect [C_p,H,W]");
    const int C = prompt.dim(0), H = prompt.dim(1), W = prompt.dim(2);
    if (fit.components.dim(0) != C) throw ArgumentError("pca_project_rgb: component/prompt width mismatch");
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<float> rgb({H, W, 3});
    if (fit.degenerate) {
        rgb.fill(0.5f);
        return rgb;
    }
    for (int comp = 0; comp < 3; ++comp) {
        std::vector<float> proj(plane, 0.0f);
        float lo = 1e30f, hi = -1e30f;
        for (size_t i = 0; i < plane; ++i) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c)
                acc += (prompt[static_cast<size_t>(c) * plane + i] - fit.mean[c]) *
                       fit.components[static_cast<size_t>(comp) * C + c];
            proj[i] = static_cast<float>(acc);
            lo = std::min(lo, proj[i]);
            hi = std::max(hi, proj[i]);
        }
        const float scale = hi > lo ? 1.0f / (hi - lo) : 0.0f;
        for (size_t i = 0; i < plane; ++i) rgb[i * 3 + comp] = hi > lo ? (proj[i] - lo) * scale : 0.5f;
    }
    return rgb;
}

PromptPca prompt_pca(const Tensor<float>& prompt) {
    std::vector<const Tensor<float>*> one = {&prompt};
    PromptPca fit = fit_prompt_pca(one);
    fit.rgb = pca_project_rgb(fit, prompt);
    return fit;
}

}  // namespace tdpcr
