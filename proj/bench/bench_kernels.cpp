// Benchmark: OpenMP kernels against their serial references at
// model-relevant shapes, plus one full forward/backward training step.
// Usage: bench_kernels [--quick]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>

#include <omp.h>

#include "tdpcr/kernels.hpp"
#include "tdpcr/kernels_ref.hpp"
#include "tdpcr/network.hpp"
#include "tdpcr/objectives.hpp"
#include "tdpcr/rng.hpp"

using namespace tdpcr;

namespace {

double now() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <class F>
double time_best(F&& f, int reps) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now();
        f();
        best = std::min(best, now() - t0);
    }
    return best;
}

Tensor<float> rand_tensor(std::vector<int> shape, uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Rng rng(seed);
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

void bench_gemm(int m, int n, int k, int reps) {
    auto a = rand_tensor({m, k}, 1);
    auto b = rand_tensor({k, n}, 2);
    Tensor<float> c({m, n});
    const double flops = 2.0 * m * n * k;
    const double ts = time_best(
        [&] { kernels::ref::gemm<float>(false, false, m, n, k, 1.f, a.data(), k, b.data(), n, 0.f, c.data(), n); },
        std::max(1, reps / 8));
    const double tp = time_best(
        [&] { kernels::gemm<float>(false, false, m, n, k, 1.f, a.data(), k, b.data(), n, 0.f, c.data(), n); }, reps);
    std::printf("gemm      %4dx%5dx%4d  serial %7.2f GF/s  omp %7.2f GF/s  speedup %5.2fx\n", m, n, k,
                flops / ts / 1e9, flops / tp / 1e9, ts / tp);
}

void bench_conv(int b, int cin, int h, int w, int cout, int k, int stride, int reps) {
    auto x = rand_tensor({b, cin, h, w}, 3);
    auto wt = rand_tensor({cout, cin, k, k}, 4);
    auto bias = rand_tensor({cout}, 5);
    const int oh = kernels::conv_out_dim(h, k, stride, k / 2);
    const int ow = kernels::conv_out_dim(w, k, stride, k / 2);
    Tensor<float> y({b, cout, oh, ow});
    const double flops = 2.0 * b * k * k * cin * cout * oh * ow;
    const double ts = time_best(
        [&] {
            for (int i = 0; i < b; ++i)
                kernels::ref::conv2d_forward(x.data() + static_cast<size_t>(i) * cin * h * w, wt.data(), bias.data(),
                                             y.data() + static_cast<size_t>(i) * cout * oh * ow, cin, h, w, cout, k,
                                             k, stride, k / 2);
        },
        1);
    const double tp = time_best(
        [&] {
            kernels::conv2d_forward(x.data(), wt.data(), bias.data(), y.data(), b, cin, h, w, cout, k, stride,
                                    k / 2);
        },
        reps);
    std::printf("conv%dx%d   b%d %3d->%3d @%3dx%3d s%d  serial %7.2f GF/s  omp %7.2f GF/s  speedup %5.2fx\n", k, k, b,
                cin, cout, h, w, stride, flops / ts / 1e9, flops / tp / 1e9, ts / tp);
}

void bench_dwconv(int b, int c, int h, int w, int k, int reps) {
    auto x = rand_tensor({b, c, h, w}, 6);
    auto wt = rand_tensor({c, k, k}, 7);
    const int oh = h + 2 * (k / 2) - k + 1, ow = w + 2 * (k / 2) - k + 1;
    Tensor<float> y({b, c, oh, ow});
    const float* nb = nullptr;
    const double flops = 2.0 * b * k * k * c * oh * ow;
    const double ts = time_best(
        [&] {
            for (int i = 0; i < b; ++i)
                kernels::ref::dwconv2d_forward(x.data() + static_cast<size_t>(i) * c * h * w, wt.data(), nb,
                                               y.data() + static_cast<size_t>(i) * c * oh * ow, c, h, w, k, k / 2);
        },
        1);
    const double tp = time_best(
        [&] { kernels::dwconv2d_forward(x.data(), wt.data(), nb, y.data(), b, c, h, w, k, k / 2); }, reps);
    std::printf("dwconv%d   b%d c%3d @%3dx%3d        serial %7.2f GF/s  omp %7.2f GF/s  speedup %5.2fx\n", k, b, c, h,
                w, flops / ts / 1e9, flops / tp / 1e9, ts / tp);
}

void bench_layernorm(int b, int c, int h, int w, int reps) {
    auto x = rand_tensor({b, c, h, w}, 8);
    auto gamma = rand_tensor({c}, 9);
    auto beta = rand_tensor({c}, 10);
    Tensor<float> y({b, c, h, w}), sm({b, h, w}), sr({b, h, w});
    const double bytes = 2.0 * x.size() * 4;
    const double ts = time_best(
        [&] {
            for (int i = 0; i < b; ++i)
                kernels::ref::layernorm_chan_forward(x.data() + static_cast<size_t>(i) * c * h * w, gamma.data(),
                                                     beta.data(), y.data() + static_cast<size_t>(i) * c * h * w, c, h,
                                                     w, 1e-6f);
        },
        1);
    const double tp = time_best(
        [&] {
            kernels::layernorm_chan_forward(x.data(), gamma.data(), beta.data(), y.data(), sm.data(), sr.data(), b, c,
                                            h, w, 1e-6f);
        },
        reps);
    std::printf("layernorm b%d c%3d @%3dx%3d        serial %7.2f GB/s  omp %7.2f GB/s  speedup %5.2fx\n", b, c, h, w,
                bytes / ts / 1e9, bytes / tp / 1e9, ts / tp);
}

void bench_resize(int b, int c, int h, int w, int reps) {
    auto x = rand_tensor({b, c, h, w}, 11);
    Tensor<float> y({b, c, 2 * h, 2 * w});
    const double pix = static_cast<double>(y.size());
    const double ts = time_best(
        [&] {
            for (int p = 0; p < b * c; ++p)
                kernels::ref::bilinear_resize_forward(x.data() + static_cast<size_t>(p) * h * w,
                                                      y.data() + static_cast<size_t>(p) * 4 * h * w, h, w, 2 * h,
                                                      2 * w);
        },
        1);
    const double tp = time_best(
        [&] { kernels::bilinear_resize_forward(x.data(), y.data(), b, c, h, w, 2 * h, 2 * w); }, reps);
    std::printf("resize2x  b%d c%3d @%3dx%3d        serial %7.2f MP/s  omp %7.2f MP/s  speedup %5.2fx\n", b, c, h, w,
                pix / ts / 1e6, pix / tp / 1e6, ts / tp);
}

double bench_model_step(int batch, int hw, bool with_seg) {
    NetworkConfig cfg;
    TdpcrNetwork<float> net(cfg, 1);
    auto ic = rand_tensor({batch, 13, hw, hw}, 12);
    auto is = rand_tensor({batch, 2, hw, hw}, 13);
    auto gt = rand_tensor({batch, 13, hw, hw}, 14);
    for (size_t i = 0; i < ic.size(); ++i) ic[i] = 0.5f + 0.4f * ic[i];
    for (size_t i = 0; i < gt.size(); ++i) gt[i] = 0.5f + 0.4f * gt[i];
    Tensor<uint8_t> labels({batch, hw, hw});
    Rng lr(15);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>(lr.uniform_int(6));
    LossWeights w;

    auto step = [&] {
        Tape<float> tape;
        auto out = net.forward(tape, tape.leaf(ic), tape.leaf(is), with_seg);
        Value<float>* loss = with_seg ? joint_loss(tape, out.restored, tape.leaf(gt), out.seg_logits, labels, w)
                                      : rec_loss(tape, out.restored, tape.leaf(gt), w);
        tape.backward(loss);
        net.store().zero_grads();
    };
    step();  // warm up
    const double t = time_best(step, 2);
    const double flops = 3.0 * estimate_flops(cfg, hw, hw, with_seg) * batch;  // fwd + ~2x bwd
    std::printf("train step b%d @%dx%d %s: %6.3f s  (~%5.1f GF/s effective)\n", batch, hw, hw,
                with_seg ? "joint" : "rec  ", t, flops / t / 1e9);
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    std::printf("threads: %d\n", omp_get_max_threads());

    bench_gemm(64, 4096, 288, 10);
    bench_gemm(128, 1024, 576, 10);
    bench_gemm(512, 64, 2304, 10);
    bench_conv(4, 32, 64, 64, 64, 3, 2, 5);
    bench_conv(4, 13, 64, 64, 32, 3, 1, 5);
    bench_conv(4, 64, 32, 32, 64, 1, 1, 5);
    bench_dwconv(4, 64, 64, 64, 3, 5);
    bench_dwconv(1, 13, 128, 128, 11, 5);
    bench_layernorm(4, 64, 64, 64, 5);
    bench_resize(4, 8, 64, 64, 5);

    if (!quick) {
        bench_model_step(4, 64, false);
        bench_model_step(4, 64, true);
        bench_model_step(8, 64, false);
        bench_model_step(1, 128, true);
    }
    return 0;
}
