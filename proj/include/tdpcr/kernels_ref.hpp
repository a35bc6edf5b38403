#pragma once

#include <cmath>
#include <cstddef>

// Serial reference kernels. Straight loops, no threading, no tiling.
// These define the expected numerics; the OpenMP kernels in kernels.hpp are
// validated against them in tests and raced against them in the benchmark.

namespace tdpcr::kernels::ref {

// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
          int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                T av = ta ? a[static_cast<size_t>(p) * lda + i] : a[static_cast<size_t>(i) * lda + p];
                T bv = tb ? b[static_cast<size_t>(j) * ldb + p] : b[static_cast<size_t>(p) * ldb + j];
                acc += static_cast<double>(av) * static_cast<double>(bv);
            }
            size_t ci = static_cast<size_t>(i) * ldc + j;
            c[ci] = static_cast<T>(alpha * acc + (beta == T(0) ? 0.0 : static_cast<double>(beta) * c[ci]));
        }
    }
}

// Direct dense convolution, one batch item. x[cin,h,w] -> y[cout,oh,ow].
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int cin, int h, int wd, int cout, int kh, int kw,
                    int stride, int pad) {
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias ? static_cast<double>(bias[co]) : 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * stride - pad + ky;
                            int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += static_cast<double>(x[(static_cast<size_t>(ci) * h + iy) * wd + ix]) *
                                   static_cast<double>(
                                       w[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx]);
                        }
                y[(static_cast<size_t>(co) * oh + oy) * ow + ox] = static_cast<T>(acc);
            }
}

// Gradients of the direct convolution (accumulating).
template <typename T>
void conv2d_dgrad(const T* dy, const T* w, T* dx, int cin, int h, int wd, int cout, int kh, int kw, int stride,
                  int pad) {
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T g = dy[(static_cast<size_t>(co) * oh + oy) * ow + ox];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * stride - pad + ky;
                            int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            dx[(static_cast<size_t>(ci) * h + iy) * wd + ix] +=
                                g * w[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        }
            }
}

template <typename T>
void conv2d_wgrad(const T* x, const T* dy, T* dw, T* dbias, int cin, int h, int wd, int cout, int kh, int kw,
                  int stride, int pad) {
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T g = dy[(static_cast<size_t>(co) * oh + oy) * ow + ox];
                if (dbias) dbias[co] += g;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * stride - pad + ky;
                            int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            dw[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx] +=
                                g * x[(static_cast<size_t>(ci) * h + iy) * wd + ix];
                        }
            }
}

// Depthwise convolution, one batch item, stride 1. w[c,k,k].
template <typename T>
void dwconv2d_forward(const T* x, const T* w, const T* bias, T* y, int c, int h, int wd, int k, int pad) {
    int oh = h + 2 * pad - k + 1;
    int ow = wd + 2 * pad - k + 1;
    for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bias ? static_cast<double>(bias[ci]) : 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        int iy = oy - pad + ky;
                        int ix = ox - pad + kx;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                        acc += static_cast<double>(x[(static_cast<size_t>(ci) * h + iy) * wd + ix]) *
                               static_cast<double>(w[(static_cast<size_t>(ci) * k + ky) * k + kx]);
                    }
                y[(static_cast<size_t>(ci) * oh + oy) * ow + ox] = static_cast<T>(acc);
            }
}

// Per-position layer norm over channels (NCHW, one batch item).
template <typename T>
void layernorm_chan_forward(const T* x, const T* gamma, const T* beta, T* y, int c, int h, int w, T eps) {
    for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
            double mean = 0.0, var = 0.0;
            for (int ci = 0; ci < c; ++ci) mean += x[(static_cast<size_t>(ci) * h + iy) * w + ix];
            mean /= c;
            for (int ci = 0; ci < c; ++ci) {
                double d = x[(static_cast<size_t>(ci) * h + iy) * w + ix] - mean;
                var += d * d;
            }
            var /= c;
            double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
            for (int ci = 0; ci < c; ++ci) {
                size_t idx = (static_cast<size_t>(ci) * h + iy) * w + ix;
                y[idx] = static_cast<T>((x[idx] - mean) * rstd * gamma[ci] + beta[ci]);
            }
        }
}

// Bilinear resize, align_corners disabled, one (b,c) plane.
template <typename T>
void bilinear_resize_forward(const T* x, T* y, int ih, int iw, int oh, int ow) {
    double sy = static_cast<double>(ih) / oh;
    double sx = static_cast<double>(iw) / ow;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double fy = (oy + 0.5) * sy - 0.5;
            double fx = (ox + 0.5) * sx - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            int x0 = static_cast<int>(std::floor(fx));
            double wy = fy - y0, wx = fx - x0;
            int y0c = y0 < 0 ? 0 : (y0 >= ih ? ih - 1 : y0);
            int y1c = y0 + 1 < 0 ? 0 : (y0 + 1 >= ih ? ih - 1 : y0 + 1);
            int x0c = x0 < 0 ? 0 : (x0 >= iw ? iw - 1 : x0);
            int x1c = x0 + 1 < 0 ? 0 : (x0 + 1 >= iw ? iw - 1 : x0 + 1);
            double v = (1 - wy) * ((1 - wx) * x[static_cast<size_t>(y0c) * iw + x0c] +
                                   wx * x[static_cast<size_t>(y0c) * iw + x1c]) +
                       wy * ((1 - wx) * x[static_cast<size_t>(y1c) * iw + x0c] +
                             wx * x[static_cast<size_t>(y1c) * iw + x1c]);
            y[static_cast<size_t>(oy) * ow + ox] = static_cast<T>(v);
        }
}

}  // namespace tdpcr::kernels::ref
