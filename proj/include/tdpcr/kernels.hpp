#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "tdpcr/common.hpp"

// OpenMP-parallel kernels. All parallel loops partition output elements by
// ownership (no atomics, no cross-thread reductions), so results are
// reproducible run-to-run for a fixed binary and thread count. Serial
// references live in kernels_ref.hpp.

namespace tdpcr::kernels {

inline int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

namespace detail {

// Reusable per-type scratch, grown monotonically. Kernel drivers are invoked
// from the (single) op-dispatch thread; parallelism lives inside kernels.
template <typename T>
std::vector<T>& scratch(int slot, size_t n) {
    static thread_local std::vector<T> bufs[4];
    std::vector<T>& b = bufs[slot];
    if (b.size() < n) b.resize(n);
    return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM: C = alpha * op(A) * op(B) + beta * C, row-major.
// NN/TN use an N-tiled ikj schedule (4-row register blocking); NT uses
// simd-reduction dot products. Threads own disjoint row/column blocks.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void scale_rows(T* c, int m, int n, int ldc, T beta) {
    if (beta == T(1)) return;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* row = c + static_cast<size_t>(i) * ldc;
        if (beta == T(0))
            std::fill(row, row + n, T(0));
        else
            for (int j = 0; j < n; ++j) row[j] *= beta;
    }
}

// Shared body for NN (ta=false) and TN (ta=true): inner loop streams B rows.
template <typename T, bool TA>
void gemm_bstream(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
    constexpr int NT_TILE = 1024;
    const int nblk = static_cast<int>(ceil_div(m, 4));
#pragma omp parallel for schedule(static)
    for (int ib = 0; ib < nblk; ++ib) {
        const int i = ib * 4;
        const int ir = std::min(4, m - i);
        for (int j0 = 0; j0 < n; j0 += NT_TILE) {
            const int jn = std::min(NT_TILE, n - j0);
            T* __restrict c0 = c + static_cast<size_t>(i) * ldc + j0;
            T* __restrict c1 = c + static_cast<size_t>(std::min(i + 1, m - 1)) * ldc + j0;
            T* __restrict c2 = c + static_cast<size_t>(std::min(i + 2, m - 1)) * ldc + j0;
            T* __restrict c3 = c + static_cast<size_t>(std::min(i + 3, m - 1)) * ldc + j0;
            if (ir == 4) {
                for (int p = 0; p < k; ++p) {
                    const T a0 = alpha * (TA ? a[static_cast<size_t>(p) * lda + i + 0]
                                             : a[static_cast<size_t>(i + 0) * lda + p]);
                    const T a1 = alpha * (TA ? a[static_cast<size_t>(p) * lda + i + 1]
                                             : a[static_cast<size_t>(i + 1) * lda + p]);
                    const T a2 = alpha * (TA ? a[static_cast<size_t>(p) * lda + i + 2]
                                             : a[static_cast<size_t>(i + 2) * lda + p]);
                    const T a3 = alpha * (TA ? a[static_cast<size_t>(p) * lda + i + 3]
                                             : a[static_cast<size_t>(i + 3) * lda + p]);
                    const T* __restrict br = b + static_cast<size_t>(p) * ldb + j0;
                    for (int j = 0; j < jn; ++j) {
                        const T bv = br[j];
                        c0[j] += a0 * bv;
                        c1[j] += a1 * bv;
                        c2[j] += a2 * bv;
                        c3[j] += a3 * bv;
                    }
                }
            } else {
                for (int ii = i; ii < i + ir; ++ii) {
                    T* __restrict cr = c + static_cast<size_t>(ii) * ldc + j0;
                    for (int p = 0; p < k; ++p) {
                        const T av = alpha * (TA ? a[static_cast<size_t>(p) * lda + ii]
                                                 : a[static_cast<size_t>(ii) * lda + p]);
                        const T* __restrict br = b + static_cast<size_t>(p) * ldb + j0;
                        for (int j = 0; j < jn; ++j) cr[j] += av * br[j];
                    }
                }
            }
        }
    }
}

// NT: rows of A against rows of B, contiguous dot products.
template <typename T>
void gemm_nt(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* __restrict ar = a + static_cast<size_t>(i) * lda;
        T* __restrict cr = c + static_cast<size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) {
            const T* __restrict br = b + static_cast<size_t>(j) * ldb;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += alpha * acc;
        }
    }
}

}  // namespace detail

template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta, T* c,
          int ldc) {
    detail::scale_rows(c, m, n, ldc, beta);
    if (m == 0 || n == 0 || k == 0) return;
    if (!ta && !tb)
        detail::gemm_bstream<T, false>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
    else if (ta && !tb)
        detail::gemm_bstream<T, true>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
    else if (!ta && tb)
        detail::gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
    else
        throw ArgumentError("gemm: TT form not supported");
}

// ---------------------------------------------------------------------------
// im2col / col2im. cols is [cin*kh*kw, oh*ow].
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, int pad, T* cols) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int rows = cin * kh * kw;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int ci = r / (kh * kw);
        const int ky = (r / kw) % kh;
        const int kx = r % kw;
        const T* __restrict src = x + static_cast<size_t>(ci) * h * w;
        T* __restrict dst = cols + static_cast<size_t>(r) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            T* __restrict drow = dst + static_cast<size_t>(oy) * ow;
            if (iy < 0 || iy >= h) {
                std::fill(drow, drow + ow, T(0));
                continue;
            }
            const T* __restrict srow = src + static_cast<size_t>(iy) * w;
            if (stride == 1) {
                const int ix0 = -pad + kx;
                int ox = 0;
                for (; ox < std::min(ow, -ix0); ++ox) drow[ox] = T(0);
                const int valid_end = std::min(ow, w - ix0);
                for (; ox < valid_end; ++ox) drow[ox] = srow[ix0 + ox];
                for (; ox < ow; ++ox) drow[ox] = T(0);
            } else {
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - pad + kx;
                    drow[ox] = (ix < 0 || ix >= w) ? T(0) : srow[ix];
                }
            }
        }
    }
}

// Accumulates into x.
template <typename T>
void col2im(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int pad, T* x) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        T* __restrict dst = x + static_cast<size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* __restrict src =
                    cols + (static_cast<size_t>(ci) * kh * kw + static_cast<size_t>(ky) * kw + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* __restrict srow = src + static_cast<size_t>(oy) * ow;
                    T* __restrict drow = dst + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                    }
                }
            }
    }
}

// ---------------------------------------------------------------------------
// Dense convolution drivers (batched, im2col + GEMM, 1x1 fast path).
// w[cout,cin,kh,kw]; y[b,cout,oh,ow]. dgrad/wgrad accumulate.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int bsz, int cin, int h, int wd, int cout, int k,
                    int stride, int pad) {
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(wd, k, stride, pad);
    const size_t xs = static_cast<size_t>(cin) * h * wd;
    const size_t ys = static_cast<size_t>(cout) * oh * ow;
    const int kk = cin * k * k;
    const bool direct = (k == 1 && stride == 1 && pad == 0);
    T* cols = nullptr;
    if (!direct) cols = detail::scratch<T>(0, static_cast<size_t>(kk) * oh * ow).data();
    for (int b = 0; b < bsz; ++b) {
        const T* xb = x + b * xs;
        if (!direct) im2col(xb, cin, h, wd, k, k, stride, pad, cols);
        gemm<T>(false, false, cout, oh * ow, kk, T(1), w, kk, direct ? xb : cols, oh * ow, T(0), y + b * ys, oh * ow);
    }
    if (bias) {
        const size_t plane = static_cast<size_t>(oh) * ow;
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < bsz; ++b)
            for (int co = 0; co < cout; ++co) {
                T* __restrict row = y + b * ys + co * plane;
                const T bv = bias[co];
                for (size_t i = 0; i < plane; ++i) row[i] += bv;
            }
    }
}

template <typename T>
void conv2d_dgrad(const T* dy, const T* w, T* dx, int bsz, int cin, int h, int wd, int cout, int k, int stride,
                  int pad) {
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(wd, k, stride, pad);
    const size_t xs = static_cast<size_t>(cin) * h * wd;
    const size_t ys = static_cast<size_t>(cout) * oh * ow;
    const int kk = cin * k * k;
    const bool direct = (k == 1 && stride == 1 && pad == 0);
    T* cols = nullptr;
    if (!direct) cols = detail::scratch<T>(0, static_cast<size_t>(kk) * oh * ow).data();
    for (int b = 0; b < bsz; ++b) {
        if (direct) {
            // dx += W^T * dy
            gemm<T>(true, false, cin, oh * ow, cout, T(1), w, cin, dy + b * ys, oh * ow, T(1), dx + b * xs, oh * ow);
        } else {
            gemm<T>(true, false, kk, oh * ow, cout, T(1), w, kk, dy + b * ys, oh * ow, T(0), cols, oh * ow);
            col2im(cols, cin, h, wd, k, k, stride, pad, dx + b * xs);
        }
    }
}

template <typename T>
void conv2d_wgrad(const T* x, const T* dy, T* dw, T* dbias, int bsz, int cin, int h, int wd, int cout, int k,
                  int stride, int pad) {
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(wd, k, stride, pad);
    const size_t xs = static_cast<size_t>(cin) * h * wd;
    const size_t ys = static_cast<size_t>(cout) * oh * ow;
    const int kk = cin * k * k;
    const bool direct = (k == 1 && stride == 1 && pad == 0);
    T* cols = nullptr;
    if (!direct) cols = detail::scratch<T>(0, static_cast<size_t>(kk) * oh * ow).data();
    for (int b = 0; b < bsz; ++b) {
        const T* xb = x + b * xs;
        if (!direct) im2col(xb, cin, h, wd, k, k, stride, pad, cols);
        // dw += dy_b * cols^T
        gemm<T>(false, true, cout, kk, oh * ow, T(1), dy + b * ys, oh * ow, direct ? xb : cols, oh * ow, T(1), dw, kk);
    }
    if (dbias) {
        const size_t plane = static_cast<size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (int b = 0; b < bsz; ++b) {
                const T* __restrict row = dy + b * ys + co * plane;
                T part = T(0);
#pragma omp simd reduction(+ : part)
                for (size_t i = 0; i < plane; ++i) part += row[i];
                acc += static_cast<double>(part);
            }
            dbias[co] += static_cast<T>(acc);
        }
    }
}

// ---------------------------------------------------------------------------
// Depthwise convolution (stride 1, arbitrary odd k). w[c,k,k].
// ---------------------------------------------------------------------------

template <typename T>
void dwconv2d_forward(const T* x, const T* w, const T* bias, T* y, int bsz, int c, int h, int wd, int k, int pad) {
    const int oh = h + 2 * pad - k + 1;
    const int ow = wd + 2 * pad - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < bsz; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* __restrict src = x + (static_cast<size_t>(b) * c + ci) * h * wd;
            const T* __restrict ker = w + static_cast<size_t>(ci) * k * k;
            T* __restrict dst = y + (static_cast<size_t>(b) * c + ci) * oh * ow;
            const T bv = bias ? bias[ci] : T(0);
            for (int oy = 0; oy < oh; ++oy) {
                T* __restrict drow = dst + static_cast<size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) drow[ox] = bv;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* __restrict srow = src + static_cast<size_t>(iy) * wd;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix0 = kx - pad;
                        const T wv = ker[ky * k + kx];
                        const int lo = std::max(0, -ix0);
                        const int hi = std::min(ow, wd - ix0);
                        for (int ox = lo; ox < hi; ++ox) drow[ox] += wv * srow[ix0 + ox];
                    }
                }
            }
        }
}

template <typename T>
void dwconv2d_dgrad(const T* dy, const T* w, T* dx, int bsz, int c, int h, int wd, int k, int pad) {
    const int oh = h + 2 * pad - k + 1;
    const int ow = wd + 2 * pad - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < bsz; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* __restrict gsrc = dy + (static_cast<size_t>(b) * c + ci) * oh * ow;
            const T* __restrict ker = w + static_cast<size_t>(ci) * k * k;
            T* __restrict dst = dx + (static_cast<size_t>(b) * c + ci) * h * wd;
            for (int oy = 0; oy < oh; ++oy) {
                const T* __restrict grow = gsrc + static_cast<size_t>(oy) * ow;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* __restrict drow = dst + static_cast<size_t>(iy) * wd;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix0 = kx - pad;
                        const T wv = ker[ky * k + kx];
                        const int lo = std::max(0, -ix0);
                        const int hi = std::min(ow, wd - ix0);
                        for (int ox = lo; ox < hi; ++ox) drow[ix0 + ox] += wv * grow[ox];
                    }
                }
            }
        }
}

template <typename T>
void dwconv2d_wgrad(const T* x, const T* dy, T* dw, T* dbias, int bsz, int c, int h, int wd, int k, int pad) {
    const int oh = h + 2 * pad - k + 1;
    const int ow = wd + 2 * pad - k + 1;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
        T* __restrict dker = dw + static_cast<size_t>(ci) * k * k;
        double dbv = 0.0;
        for (int b = 0; b < bsz; ++b) {
            const T* __restrict src = x + (static_cast<size_t>(b) * c + ci) * h * wd;
            const T* __restrict gsrc = dy + (static_cast<size_t>(b) * c + ci) * oh * ow;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const int ix0 = kx - pad;
                    double acc = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const T* __restrict srow = src + static_cast<size_t>(iy) * wd;
                        const T* __restrict grow = gsrc + static_cast<size_t>(oy) * ow;
                        const int lo = std::max(0, -ix0);
                        const int hi = std::min(ow, wd - ix0);
                        T part = T(0);
#pragma omp simd reduction(+ : part)
                        for (int ox = lo; ox < hi; ++ox) part += srow[ix0 + ox] * grow[ox];
                        acc += static_cast<double>(part);
                    }
                    dker[ky * k + kx] += static_cast<T>(acc);
                }
            if (dbias) {
                T part = T(0);
                const size_t plane = static_cast<size_t>(oh) * ow;
#pragma omp simd reduction(+ : part)
                for (size_t i = 0; i < plane; ++i) part += gsrc[i];
                dbv += static_cast<double>(part);
            }
        }
        if (dbias) dbias[ci] += static_cast<T>(dbv);
    }
}

// ---------------------------------------------------------------------------
// Per-position layer norm over channels (NCHW). save_mean/save_rstd: [b,h,w].
// ---------------------------------------------------------------------------

template <typename T>
void layernorm_chan_forward(const T* x, const T* gamma, const T* beta, T* y, T* save_mean, T* save_rstd, int bsz,
                            int c, int h, int w, T eps) {
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t cs = static_cast<size_t>(c) * plane;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < bsz; ++b)
        for (int iy = 0; iy < h; ++iy) {
            const T* __restrict xrow = x + b * cs + static_cast<size_t>(iy) * w;
            T* __restrict yrow = y + b * cs + static_cast<size_t>(iy) * w;
            T* __restrict mrow = save_mean + (static_cast<size_t>(b) * h + iy) * w;
            T* __restrict rrow = save_rstd + (static_cast<size_t>(b) * h + iy) * w;
            for (int ix = 0; ix < w; ++ix) {
                mrow[ix] = T(0);
                rrow[ix] = T(0);
            }
            for (int ci = 0; ci < c; ++ci) {
                const T* __restrict xr = xrow + ci * plane;
                for (int ix = 0; ix < w; ++ix) {
                    mrow[ix] += xr[ix];
                    rrow[ix] += xr[ix] * xr[ix];
                }
            }
            const T invc = T(1) / static_cast<T>(c);
            for (int ix = 0; ix < w; ++ix) {
                const T mean = mrow[ix] * invc;
                T var = rrow[ix] * invc - mean * mean;
                if (var < T(0)) var = T(0);
                mrow[ix] = mean;
                rrow[ix] = T(1) / std::sqrt(var + eps);
            }
            for (int ci = 0; ci < c; ++ci) {
                const T* __restrict xr = xrow + ci * plane;
                T* __restrict yr = yrow + ci * plane;
                const T g = gamma[ci], bb = beta[ci];
                for (int ix = 0; ix < w; ++ix) yr[ix] = (xr[ix] - mrow[ix]) * rrow[ix] * g + bb;
            }
        }
}

// dx accumulates; dgamma/dbeta accumulate. Parallel over batch with
// per-batch partials reduced serially (deterministic).
template <typename T>
void layernorm_chan_backward(const T* x, const T* gamma, const T* save_mean, const T* save_rstd, const T* dy, T* dx,
                             T* dgamma, T* dbeta, int bsz, int c, int h, int w) {
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t cs = static_cast<size_t>(c) * plane;
    std::vector<T>& partials = detail::scratch<T>(1, static_cast<size_t>(bsz) * c * 2);
    std::fill(partials.begin(), partials.begin() + static_cast<size_t>(bsz) * c * 2, T(0));
    std::vector<T>& rowbuf = detail::scratch<T>(2, static_cast<size_t>(bsz) * h * w * 2);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < bsz; ++b) {
        T* __restrict pg = partials.data() + static_cast<size_t>(b) * c * 2;
        T* __restrict pb = pg + c;
        const T invc = T(1) / static_cast<T>(c);
        for (int iy = 0; iy < h; ++iy) {
            const size_t png = (static_cast<size_t>(b) * h + iy) * w;
            const T* __restrict mrow = save_mean + png;
            const T* __restrict rrow = save_rstd + png;
            // s1 = sum_c dxhat, s2 = sum_c dxhat * xhat
            T* __restrict s1 = rowbuf.data() + (static_cast<size_t>(b) * h + iy) * w * 2;
            T* __restrict s2 = s1 + w;
            for (int ix = 0; ix < w; ++ix) {
                s1[ix] = T(0);
                s2[ix] = T(0);
            }
            for (int ci = 0; ci < c; ++ci) {
                const T* __restrict xr = x + b * cs + ci * plane + static_cast<size_t>(iy) * w;
                const T* __restrict gr = dy + b * cs + ci * plane + static_cast<size_t>(iy) * w;
                const T g = gamma[ci];
                T accg = T(0), accb = T(0);
                for (int ix = 0; ix < w; ++ix) {
                    const T xhat = (xr[ix] - mrow[ix]) * rrow[ix];
                    const T dxhat = gr[ix] * g;
                    s1[ix] += dxhat;
                    s2[ix] += dxhat * xhat;
                    accg += gr[ix] * xhat;
                    accb += gr[ix];
                }
                pg[ci] += accg;
                pb[ci] += accb;
            }
            for (int ci = 0; ci < c; ++ci) {
                const T* __restrict xr = x + b * cs + ci * plane + static_cast<size_t>(iy) * w;
                const T* __restrict gr = dy + b * cs + ci * plane + static_cast<size_t>(iy) * w;
                T* __restrict dr = dx + b * cs + ci * plane + static_cast<size_t>(iy) * w;
                const T g = gamma[ci];
                for (int ix = 0; ix < w; ++ix) {
                    const T xhat = (xr[ix] - mrow[ix]) * rrow[ix];
                    const T dxhat = gr[ix] * g;
                    dr[ix] += rrow[ix] * (dxhat - invc * s1[ix] - xhat * invc * s2[ix]);
                }
            }
        }
    }
    for (int b = 0; b < bsz; ++b) {
        const T* pg = partials.data() + static_cast<size_t>(b) * c * 2;
        for (int ci = 0; ci < c; ++ci) {
            dgamma[ci] += pg[ci];
            dbeta[ci] += pg[c + ci];
        }
    }
}

// ---------------------------------------------------------------------------
// Bilinear resize (align_corners disabled), batched NCHW.
// ---------------------------------------------------------------------------

namespace detail {
inline void resize_coeffs(int in, int out, std::vector<int>& i0, std::vector<int>& i1, std::vector<float>& wgt) {
    i0.resize(out);
    i1.resize(out);
    wgt.resize(out);
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double f = (o + 0.5) * s - 0.5;
        int lo = static_cast<int>(std::floor(f));
        double t = f - lo;
        int a = std::clamp(lo, 0, in - 1);
        int b = std::clamp(lo + 1, 0, in - 1);
        i0[o] = a;
        i1[o] = b;
        wgt[o] = static_cast<float>(t);
    }
}
}  // namespace detail

template <typename T>
void bilinear_resize_forward(const T* x, T* y, int bsz, int c, int ih, int iw, int oh, int ow) {
    std::vector<int> y0, y1, x0, x1;
    std::vector<float> wy, wx;
    detail::resize_coeffs(ih, oh, y0, y1, wy);
    detail::resize_coeffs(iw, ow, x0, x1, wx);
    const int planes = bsz * c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T* __restrict src = x + static_cast<size_t>(p) * ih * iw;
        T* __restrict dst = y + static_cast<size_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const T* __restrict r0 = src + static_cast<size_t>(y0[oy]) * iw;
            const T* __restrict r1 = src + static_cast<size_t>(y1[oy]) * iw;
            const T ty = static_cast<T>(wy[oy]);
            T* __restrict drow = dst + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const T tx = static_cast<T>(wx[ox]);
                const T top = r0[x0[ox]] + tx * (r0[x1[ox]] - r0[x0[ox]]);
                const T bot = r1[x0[ox]] + tx * (r1[x1[ox]] - r1[x0[ox]]);
                drow[ox] = top + ty * (bot - top);
            }
        }
    }
}

// dx accumulates.
template <typename T>
void bilinear_resize_backward(const T* dy, T* dx, int bsz, int c, int ih, int iw, int oh, int ow) {
    std::vector<int> y0, y1, x0, x1;
    std::vector<float> wy, wx;
    detail::resize_coeffs(ih, oh, y0, y1, wy);
    detail::resize_coeffs(iw, ow, x0, x1, wx);
    const int planes = bsz * c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T* __restrict gsrc = dy + static_cast<size_t>(p) * oh * ow;
        T* __restrict gdst = dx + static_cast<size_t>(p) * ih * iw;
        for (int oy = 0; oy < oh; ++oy) {
            const T ty = static_cast<T>(wy[oy]);
            T* __restrict r0 = gdst + static_cast<size_t>(y0[oy]) * iw;
            T* __restrict r1 = gdst + static_cast<size_t>(y1[oy]) * iw;
            const T* __restrict grow = gsrc + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const T g = grow[ox];
                const T tx = static_cast<T>(wx[ox]);
                r0[x0[ox]] += g * (T(1) - ty) * (T(1) - tx);
                r0[x1[ox]] += g * (T(1) - ty) * tx;
                r1[x0[ox]] += g * ty * (T(1) - tx);
                r1[x1[ox]] += g * ty * tx;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Pixel shuffle r=2 (channel-to-space). x[b,4c,h,w] -> y[b,c,2h,2w].
// ---------------------------------------------------------------------------

template <typename T>
void pixel_shuffle2_forward(const T* x, T* y, int bsz, int cout, int h, int w) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < bsz; ++b)
        for (int co = 0; co < cout; ++co)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const T* __restrict src =
                        x + ((static_cast<size_t>(b) * cout * 4) + co * 4 + dy * 2 + dx) * h * w;
                    T* __restrict dst = y + (static_cast<size_t>(b) * cout + co) * (4 * static_cast<size_t>(h) * w);
                    for (int iy = 0; iy < h; ++iy) {
                        T* __restrict drow = dst + (static_cast<size_t>(2 * iy + dy) * 2 * w) + dx;
                        const T* __restrict srow = src + static_cast<size_t>(iy) * w;
                        for (int ix = 0; ix < w; ++ix) drow[2 * ix] = srow[ix];
                    }
                }
}

// dx accumulates.
template <typename T>
void pixel_shuffle2_backward(const T* dy, T* dx, int bsz, int cout, int h, int w) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < bsz; ++b)
        for (int co = 0; co < cout; ++co)
            for (int dyy = 0; dyy < 2; ++dyy)
                for (int dxx = 0; dxx < 2; ++dxx) {
                    T* __restrict dst =
                        dx + ((static_cast<size_t>(b) * cout * 4) + co * 4 + dyy * 2 + dxx) * h * w;
                    const T* __restrict src =
                        dy + (static_cast<size_t>(b) * cout + co) * (4 * static_cast<size_t>(h) * w);
                    for (int iy = 0; iy < h; ++iy) {
                        const T* __restrict srow = src + (static_cast<size_t>(2 * iy + dyy) * 2 * w) + dxx;
                        T* __restrict drow = dst + static_cast<size_t>(iy) * w;
                        for (int ix = 0; ix < w; ++ix) drow[ix] += srow[2 * ix];
                    }
                }
}

}  // namespace tdpcr::kernels
