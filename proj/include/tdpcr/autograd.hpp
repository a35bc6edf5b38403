#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "tdpcr/common.hpp"
#include "tdpcr/kernels.hpp"
#include "tdpcr/tensor.hpp"

// Reverse-mode tape over Tensor<T>. Ops record a backward closure only when
// some input requires a gradient, so frozen subgraphs cost nothing on the
// way back (this is what makes PEFT steps cheap where they can be).

namespace tdpcr {

template <typename T>
struct Value {
    Tensor<T> val;
    Tensor<T> grad;
    bool requires_grad = false;

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>(val.shape());
        return grad;
    }
    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
class Tape {
public:
    Value<T>* make(Tensor<T>&& v, bool requires_grad = false) {
        nodes_.push_back(std::make_unique<Value<T>>());
        Value<T>* out = nodes_.back().get();
        out->val = std::move(v);
        out->requires_grad = requires_grad;
        return out;
    }
    Value<T>* leaf(const Tensor<T>& v, bool requires_grad = false) { return make(Tensor<T>(v), requires_grad); }

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    void backward(Value<T>* loss) {
        if (loss->val.size() != 1) throw ArgumentError("backward: loss must be scalar");
        loss->ensure_grad()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    // Drops intermediates and closures; external (parameter) values survive.
    void clear() {
        ops_.clear();
        nodes_.clear();
    }

    size_t num_ops() const { return ops_.size(); }

private:
    std::vector<std::unique_ptr<Value<T>>> nodes_;
    std::vector<std::function<void()>> ops_;
};

namespace ag {

constexpr size_t kParallelCutoff = 1 << 14;

template <class F>
void ew_loop(size_t n, F f) {
    if (n < kParallelCutoff) {
        for (size_t i = 0; i < n; ++i) f(i);
    } else {
        const int64_t nn = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < nn; ++i) f(static_cast<size_t>(i));
    }
}

// --------------------------- elementwise ----------------------------------

template <typename T>
Value<T>* add(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "add");
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] + pb[i]; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i]; });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { db[i] += g[i]; });
            }
        });
    return o;
}

template <typename T>
Value<T>* sub(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] - pb[i]; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i]; });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { db[i] -= g[i]; });
            }
        });
    return o;
}

template <typename T>
Value<T>* mul(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] * pb[i]; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const T* pa2 = a->val.data();
            const T* pb2 = b->val.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i] * pb2[i]; });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { db[i] += g[i] * pa2[i]; });
            }
        });
    return o;
}

template <typename T>
Value<T>* div(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "div");
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] / pb[i]; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const T* pa2 = a->val.data();
            const T* pb2 = b->val.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i] / pb2[i]; });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { db[i] -= g[i] * pa2[i] / (pb2[i] * pb2[i]); });
            }
        });
    return o;
}

template <typename T>
Value<T>* add_scalar(Tape<T>& tp, Value<T>* a, T s) {
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] + s; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad);
    if (o->requires_grad)
        tp.record([a, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            T* da = a->ensure_grad().data();
            ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i]; });
        });
    return o;
}

template <typename T>
Value<T>* mul_scalar(Tape<T>& tp, Value<T>* a, T s) {
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] * s; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad);
    if (o->requires_grad)
        tp.record([a, o, s] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            T* da = a->ensure_grad().data();
            ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i] * s; });
        });
    return o;
}

template <typename T>
Value<T>* gelu(Tape<T>& tp, Value<T>* a) {
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    T* po = out.data();
    const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
    ew_loop(out.size(), [=](size_t i) { po[i] = pa[i] * T(0.5) * (T(1) + std::erf(pa[i] * inv_sqrt2)); });
    Value<T>* o = tp.make(std::move(out), a->requires_grad);
    if (o->requires_grad)
        tp.record([a, o, inv_sqrt2] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const T* pa2 = a->val.data();
            T* da = a->ensure_grad().data();
            const T inv_sqrt2pi = static_cast<T>(0.3989422804014326779);
            ew_loop(o->grad.size(), [=](size_t i) {
                const T x = pa2[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                da[i] += g[i] * (cdf + x * pdf);
            });
        });
    return o;
}

template <typename T>
Value<T>* sigmoid(Tape<T>& tp, Value<T>* a) {
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) {
        const T x = pa[i];
        po[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    });
    Value<T>* o = tp.make(std::move(out), a->requires_grad);
    if (o->requires_grad)
        tp.record([a, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const T* py = o->val.data();
            T* da = a->ensure_grad().data();
            ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i] * py[i] * (T(1) - py[i]); });
        });
    return o;
}

// t*a + (1-t)*b, all same shape. Keeps the result a convex combination.
template <typename T>
Value<T>* lerp(Tape<T>& tp, Value<T>* a, Value<T>* b, Value<T>* t) {
    check_same_shape(a->val, b->val, "lerp");
    check_same_shape(a->val, t->val, "lerp");
    Tensor<T> out(a->val.shape());
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    const T* pt = t->val.data();
    T* po = out.data();
    ew_loop(out.size(), [=](size_t i) { po[i] = pt[i] * pa[i] + (T(1) - pt[i]) * pb[i]; });
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad || t->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, t, o] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const T* pa2 = a->val.data();
            const T* pb2 = b->val.data();
            const T* pt2 = t->val.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { da[i] += g[i] * pt2[i]; });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { db[i] += g[i] * (T(1) - pt2[i]); });
            }
            if (t->requires_grad) {
                T* dt = t->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { dt[i] += g[i] * (pa2[i] - pb2[i]); });
            }
        });
    return o;
}

// --------------------------- structure ops --------------------------------

template <typename T>
Value<T>* slice_chan(Tape<T>& tp, Value<T>* x, int start, int count) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("slice_chan: expect 4-D input");
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (start < 0 || count <= 0 || start + count > C) throw ShapeError("slice_chan: channel range out of bounds");
    Tensor<T> out({B, count, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b)
        std::memcpy(out.data() + static_cast<size_t>(b) * count * plane,
                    x->val.data() + (static_cast<size_t>(b) * C + start) * plane, count * plane * sizeof(T));
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, B, C, start, count, plane] {
            if (!o->has_grad()) return;
            T* dx = x->ensure_grad().data();
            const T* g = o->grad.data();
            for (int b = 0; b < B; ++b) {
                T* dst = dx + (static_cast<size_t>(b) * C + start) * plane;
                const T* src = g + static_cast<size_t>(b) * count * plane;
                ew_loop(count * plane, [=](size_t i) { dst[i] += src[i]; });
            }
        });
    return o;
}

template <typename T>
Value<T>* concat_chan(Tape<T>& tp, const std::vector<Value<T>*>& xs) {
    if (xs.empty()) throw ArgumentError("concat_chan: empty input list");
    const auto& s0 = xs[0]->val.shape();
    if (s0.size() != 4) throw ShapeError("concat_chan: expect 4-D inputs");
    const int B = s0[0], H = s0[2], W = s0[3];
    int ctotal = 0;
    bool req = false;
    for (auto* x : xs) {
        const auto& s = x->val.shape();
        if (s.size() != 4 || s[0] != B || s[2] != H || s[3] != W)
            throw ShapeError("concat_chan: inconsistent shapes");
        ctotal += s[1];
        req = req || x->requires_grad;
    }
    Tensor<T> out({B, ctotal, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    int coff = 0;
    for (auto* x : xs) {
        const int c = x->val.shape()[1];
        for (int b = 0; b < B; ++b)
            std::memcpy(out.data() + (static_cast<size_t>(b) * ctotal + coff) * plane,
                        x->val.data() + static_cast<size_t>(b) * c * plane, static_cast<size_t>(c) * plane * sizeof(T));
        coff += c;
    }
    Value<T>* o = tp.make(std::move(out), req);
    if (o->requires_grad) {
        std::vector<Value<T>*> inputs = xs;
        tp.record([inputs, o, B, ctotal, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            int coff2 = 0;
            for (auto* x : inputs) {
                const int c = x->val.shape()[1];
                if (x->requires_grad) {
                    T* dx = x->ensure_grad().data();
                    for (int b = 0; b < B; ++b) {
                        const T* src = g + (static_cast<size_t>(b) * ctotal + coff2) * plane;
                        T* dst = dx + static_cast<size_t>(b) * c * plane;
                        ew_loop(static_cast<size_t>(c) * plane, [=](size_t i) { dst[i] += src[i]; });
                    }
                }
                coff2 += c;
            }
        });
    }
    return o;
}

// Channel-split elementwise product; the only nonlinearity in a NAFBlock.
template <typename T>
Value<T>* simple_gate(Tape<T>& tp, Value<T>* x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("simple_gate: expect 4-D input");
    if (s[1] % 2 != 0) throw ShapeError(strf("simple_gate: odd channel count %d", s[1]));
    const int half = s[1] / 2;
    Value<T>* a = slice_chan(tp, x, 0, half);
    Value<T>* b = slice_chan(tp, x, half, half);
    return mul(tp, a, b);
}

// --------------------------- conv / linear --------------------------------

template <typename T>
Value<T>* conv2d(Tape<T>& tp, Value<T>* x, Value<T>* w, Value<T>* bias, int stride, int pad) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d: expect 4-D tensors");
    if (xs[1] != ws[1]) throw ShapeError(strf("conv2d: input channels %d != weight channels %d", xs[1], ws[1]));
    if (ws[2] != ws[3]) throw ShapeError("conv2d: non-square kernel");
    const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[0], k = ws[2];
    const int oh = kernels::conv_out_dim(H, k, stride, pad);
    const int ow = kernels::conv_out_dim(W, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");
    Tensor<T> out({B, Cout, oh, ow});
    kernels::conv2d_forward(x->val.data(), w->val.data(), bias ? bias->val.data() : nullptr, out.data(), B, Cin, H,
                            W, Cout, k, stride, pad);
    bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    Value<T>* o = tp.make(std::move(out), req);
    if (req)
        tp.record([x, w, bias, o, B, Cin, H, W, Cout, k, stride, pad] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (x->requires_grad)
                kernels::conv2d_dgrad(g, w->val.data(), x->ensure_grad().data(), B, Cin, H, W, Cout, k, stride, pad);
            if (w->requires_grad || (bias && bias->requires_grad)) {
                T* dw = w->requires_grad ? w->ensure_grad().data() : nullptr;
                T* db = (bias && bias->requires_grad) ? bias->ensure_grad().data() : nullptr;
                if (dw)
                    kernels::conv2d_wgrad(x->val.data(), g, dw, db, B, Cin, H, W, Cout, k, stride, pad);
                else if (db) {
                    // bias-only gradient
                    const size_t plane = static_cast<size_t>(kernels::conv_out_dim(H, k, stride, pad)) *
                                         kernels::conv_out_dim(W, k, stride, pad);
                    for (int b = 0; b < B; ++b)
                        for (int co = 0; co < Cout; ++co) {
                            const T* row = g + (static_cast<size_t>(b) * Cout + co) * plane;
                            T acc = T(0);
                            for (size_t i = 0; i < plane; ++i) acc += row[i];
                            db[co] += acc;
                        }
                }
            }
        });
    return o;
}

template <typename T>
Value<T>* dwconv2d(Tape<T>& tp, Value<T>* x, Value<T>* w, Value<T>* bias, int pad) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 4 || ws.size() != 3) throw ShapeError("dwconv2d: expect x 4-D, w [c,k,k]");
    if (xs[1] != ws[0]) throw ShapeError(strf("dwconv2d: channels %d != weight groups %d", xs[1], ws[0]));
    const int B = xs[0], C = xs[1], H = xs[2], W = xs[3], k = ws[1];
    const int oh = H + 2 * pad - k + 1;
    const int ow = W + 2 * pad - k + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("dwconv2d: empty output (input smaller than window)");
    Tensor<T> out({B, C, oh, ow});
    kernels::dwconv2d_forward(x->val.data(), w->val.data(), bias ? bias->val.data() : nullptr, out.data(), B, C, H,
                              W, k, pad);
    bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    Value<T>* o = tp.make(std::move(out), req);
    if (req)
        tp.record([x, w, bias, o, B, C, H, W, k, pad] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (x->requires_grad) kernels::dwconv2d_dgrad(g, w->val.data(), x->ensure_grad().data(), B, C, H, W, k, pad);
            if (w->requires_grad)
                kernels::dwconv2d_wgrad(x->val.data(), g, w->ensure_grad().data(),
                                        (bias && bias->requires_grad) ? bias->ensure_grad().data() : nullptr, B, C, H,
                                        W, k, pad);
        });
    return o;
}

// x[B,Cin] * w[Cout,Cin]^T + b
template <typename T>
Value<T>* linear(Tape<T>& tp, Value<T>* x, Value<T>* w, Value<T>* bias) {
    const auto& xs = x->val.shape();
    const auto& ws = w->val.shape();
    if (xs.size() != 2 || ws.size() != 2) throw ShapeError("linear: expect 2-D tensors");
    if (xs[1] != ws[1]) throw ShapeError(strf("linear: in features %d != weight %d", xs[1], ws[1]));
    const int B = xs[0], Cin = xs[1], Cout = ws[0];
    Tensor<T> out({B, Cout});
    kernels::gemm<T>(false, true, B, Cout, Cin, T(1), x->val.data(), Cin, w->val.data(), Cin, T(0), out.data(), Cout);
    if (bias) {
        T* po = out.data();
        const T* pb = bias->val.data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < Cout; ++c) po[static_cast<size_t>(b) * Cout + c] += pb[c];
    }
    bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    Value<T>* o = tp.make(std::move(out), req);
    if (req)
        tp.record([x, w, bias, o, B, Cin, Cout] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (x->requires_grad)
                kernels::gemm<T>(false, false, B, Cin, Cout, T(1), g, Cout, w->val.data(), Cin, T(1),
                                 x->ensure_grad().data(), Cin);
            if (w->requires_grad)
                kernels::gemm<T>(true, false, Cout, Cin, B, T(1), g, Cout, x->val.data(), Cin, T(1),
                                 w->ensure_grad().data(), Cin);
            if (bias && bias->requires_grad) {
                T* db = bias->ensure_grad().data();
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < Cout; ++c) db[c] += g[static_cast<size_t>(b) * Cout + c];
            }
        });
    return o;
}

template <typename T>
Value<T>* layernorm_chan(Tape<T>& tp, Value<T>* x, Value<T>* gamma, Value<T>* beta, T eps = static_cast<T>(1e-6)) {
    const auto& xs = x->val.shape();
    if (xs.size() != 4) throw ShapeError("layernorm_chan: expect 4-D input");
    const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (gamma->val.size() != static_cast<size_t>(C)) throw ShapeError("layernorm_chan: gamma size mismatch");
    Tensor<T> out(xs);
    auto save_mean = std::make_shared<Tensor<T>>(std::vector<int>{B, H, W});
    auto save_rstd = std::make_shared<Tensor<T>>(std::vector<int>{B, H, W});
    kernels::layernorm_chan_forward(x->val.data(), gamma->val.data(), beta->val.data(), out.data(),
                                    save_mean->data(), save_rstd->data(), B, C, H, W, eps);
    bool req = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    Value<T>* o = tp.make(std::move(out), req);
    if (req)
        tp.record([x, gamma, beta, o, save_mean, save_rstd, B, C, H, W] {
            if (!o->has_grad()) return;
            // dgamma/dbeta are cheap; compute both when either is live.
            Tensor<T> dg_local({C}), db_local({C});
            Tensor<T> dx_sink;
            if (!x->requires_grad) dx_sink = Tensor<T>(x->val.shape());
            kernels::layernorm_chan_backward(x->val.data(), gamma->val.data(), save_mean->data(), save_rstd->data(),
                                             o->grad.data(),
                                             x->requires_grad ? x->ensure_grad().data() : dx_sink.data(),
                                             dg_local.data(), db_local.data(), B, C, H, W);
            if (gamma->requires_grad) {
                T* dst = gamma->ensure_grad().data();
                for (int c = 0; c < C; ++c) dst[c] += dg_local[c];
            }
            if (beta->requires_grad) {
                T* dst = beta->ensure_grad().data();
                for (int c = 0; c < C; ++c) dst[c] += db_local[c];
            }
        });
    return o;
}

// --------------------------- pooling / broadcast --------------------------

// Global average pool: [B,C,H,W] -> [B,C]
template <typename T>
Value<T>* gap(Tape<T>& tp, Value<T>* x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("gap: expect 4-D input");
    const int B = s[0], C = s[1];
    const size_t plane = static_cast<size_t>(s[2]) * s[3];
    Tensor<T> out({B, C});
    const T* px = x->val.data();
    T* po = out.data();
    const int planes = B * C;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T* __restrict row = px + static_cast<size_t>(p) * plane;
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (size_t i = 0; i < plane; ++i) acc += row[i];
        po[p] = acc / static_cast<T>(plane);
    }
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, planes, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            T* dx = x->ensure_grad().data();
            const T inv = T(1) / static_cast<T>(plane);
#pragma omp parallel for schedule(static)
            for (int p = 0; p < planes; ++p) {
                T* __restrict row = dx + static_cast<size_t>(p) * plane;
                const T gv = g[p] * inv;
                for (size_t i = 0; i < plane; ++i) row[i] += gv;
            }
        });
    return o;
}

// y[b,c,h,w] = x[b,c,h,w] * s[b,c]  (channel attention)
template <typename T>
Value<T>* scale_chan(Tape<T>& tp, Value<T>* x, Value<T>* s) {
    const auto& xs = x->val.shape();
    const auto& ss = s->val.shape();
    if (xs.size() != 4 || ss.size() != 2 || ss[0] != xs[0] || ss[1] != xs[1])
        throw ShapeError("scale_chan: expect x[B,C,H,W], s[B,C]");
    const int planes = xs[0] * xs[1];
    const size_t plane = static_cast<size_t>(xs[2]) * xs[3];
    Tensor<T> out(xs);
    const T* px = x->val.data();
    const T* ps = s->val.data();
    T* po = out.data();
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T sv = ps[p];
        const T* __restrict row = px + static_cast<size_t>(p) * plane;
        T* __restrict orow = po + static_cast<size_t>(p) * plane;
        for (size_t i = 0; i < plane; ++i) orow[i] = row[i] * sv;
    }
    Value<T>* o = tp.make(std::move(out), x->requires_grad || s->requires_grad);
    if (o->requires_grad)
        tp.record([x, s, o, planes, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (x->requires_grad) {
                T* dx = x->ensure_grad().data();
                const T* ps2 = s->val.data();
#pragma omp parallel for schedule(static)
                for (int p = 0; p < planes; ++p) {
                    const T sv = ps2[p];
                    const T* __restrict grow = g + static_cast<size_t>(p) * plane;
                    T* __restrict drow = dx + static_cast<size_t>(p) * plane;
                    for (size_t i = 0; i < plane; ++i) drow[i] += grow[i] * sv;
                }
            }
            if (s->requires_grad) {
                T* ds = s->ensure_grad().data();
                const T* px2 = x->val.data();
#pragma omp parallel for schedule(static)
                for (int p = 0; p < planes; ++p) {
                    const T* __restrict grow = g + static_cast<size_t>(p) * plane;
                    const T* __restrict xrow = px2 + static_cast<size_t>(p) * plane;
                    T acc = T(0);
#pragma omp simd reduction(+ : acc)
                    for (size_t i = 0; i < plane; ++i) acc += grow[i] * xrow[i];
                    ds[p] += acc;
                }
            }
        });
    return o;
}

// y[b,c,h,w] = x[b,c,h,w] * w[c]  (learnable residual scale)
template <typename T>
Value<T>* scale_chan_param(Tape<T>& tp, Value<T>* x, Value<T>* w) {
    const auto& xs = x->val.shape();
    if (xs.size() != 4 || w->val.size() != static_cast<size_t>(xs[1]))
        throw ShapeError("scale_chan_param: expect x[B,C,H,W], w[C]");
    const int B = xs[0], C = xs[1];
    const size_t plane = static_cast<size_t>(xs[2]) * xs[3];
    Tensor<T> out(xs);
    const T* px = x->val.data();
    const T* pw = w->val.data();
    T* po = out.data();
    const int planes = B * C;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T sv = pw[p % C];
        const T* __restrict row = px + static_cast<size_t>(p) * plane;
        T* __restrict orow = po + static_cast<size_t>(p) * plane;
        for (size_t i = 0; i < plane; ++i) orow[i] = row[i] * sv;
    }
    Value<T>* o = tp.make(std::move(out), x->requires_grad || w->requires_grad);
    if (o->requires_grad)
        tp.record([x, w, o, B, C, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            const int planes = B * C;
            if (x->requires_grad) {
                T* dx = x->ensure_grad().data();
                const T* pw2 = w->val.data();
#pragma omp parallel for schedule(static)
                for (int p = 0; p < planes; ++p) {
                    const T sv = pw2[p % C];
                    const T* __restrict grow = g + static_cast<size_t>(p) * plane;
                    T* __restrict drow = dx + static_cast<size_t>(p) * plane;
                    for (size_t i = 0; i < plane; ++i) drow[i] += grow[i] * sv;
                }
            }
            if (w->requires_grad) {
                T* dw = w->ensure_grad().data();
                const T* px2 = x->val.data();
#pragma omp parallel for schedule(static)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const size_t p = static_cast<size_t>(b) * C + c;
                        const T* __restrict grow = g + p * plane;
                        const T* __restrict xrow = px2 + p * plane;
                        T part = T(0);
#pragma omp simd reduction(+ : part)
                        for (size_t i = 0; i < plane; ++i) part += grow[i] * xrow[i];
                        acc += static_cast<double>(part);
                    }
                    dw[c] += static_cast<T>(acc);
                }
            }
        });
    return o;
}

// [B,C] -> [B,C,H,W]
template <typename T>
Value<T>* broadcast_chan(Tape<T>& tp, Value<T>* x, int H, int W) {
    const auto& s = x->val.shape();
    if (s.size() != 2) throw ShapeError("broadcast_chan: expect 2-D input");
    const int B = s[0], C = s[1];
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor<T> out({B, C, H, W});
    const T* px = x->val.data();
    T* po = out.data();
    const int planes = B * C;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        T* __restrict row = po + static_cast<size_t>(p) * plane;
        std::fill(row, row + plane, px[p]);
    }
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, planes, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            T* dx = x->ensure_grad().data();
#pragma omp parallel for schedule(static)
            for (int p = 0; p < planes; ++p) {
                const T* __restrict row = g + static_cast<size_t>(p) * plane;
                T acc = T(0);
#pragma omp simd reduction(+ : acc)
                for (size_t i = 0; i < plane; ++i) acc += row[i];
                dx[p] += acc;
            }
        });
    return o;
}

// spatial[B,C,H,W] + vec[B,C] broadcast over (H,W)
template <typename T>
Value<T>* add_bcast_chan(Tape<T>& tp, Value<T>* spatial, Value<T>* vec) {
    const auto& xs = spatial->val.shape();
    const auto& vs = vec->val.shape();
    if (xs.size() != 4 || vs.size() != 2 || vs[0] != xs[0] || vs[1] != xs[1])
        throw ShapeError("add_bcast_chan: expect x[B,C,H,W], v[B,C]");
    const int planes = xs[0] * xs[1];
    const size_t plane = static_cast<size_t>(xs[2]) * xs[3];
    Tensor<T> out(xs);
    const T* px = spatial->val.data();
    const T* pv = vec->val.data();
    T* po = out.data();
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const T vv = pv[p];
        const T* __restrict row = px + static_cast<size_t>(p) * plane;
        T* __restrict orow = po + static_cast<size_t>(p) * plane;
        for (size_t i = 0; i < plane; ++i) orow[i] = row[i] + vv;
    }
    Value<T>* o = tp.make(std::move(out), spatial->requires_grad || vec->requires_grad);
    if (o->requires_grad)
        tp.record([spatial, vec, o, planes, plane] {
            if (!o->has_grad()) return;
            const T* g = o->grad.data();
            if (spatial->requires_grad) {
                T* dx = spatial->ensure_grad().data();
                ew_loop(o->grad.size(), [=](size_t i) { dx[i] += g[i]; });
            }
            if (vec->requires_grad) {
                T* dv = vec->ensure_grad().data();
#pragma omp parallel for schedule(static)
                for (int p = 0; p < planes; ++p) {
                    const T* __restrict row = g + static_cast<size_t>(p) * plane;
                    T acc = T(0);
#pragma omp simd reduction(+ : acc)
                    for (size_t i = 0; i < plane; ++i) acc += row[i];
                    dv[p] += acc;
                }
            }
        });
    return o;
}

template <typename T>
Value<T>* bilinear_resize(Tape<T>& tp, Value<T>* x, int oh, int ow) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("bilinear_resize: expect 4-D input");
    if (oh <= 0 || ow <= 0) throw ArgumentError(strf("bilinear_resize: non-positive target %dx%d", oh, ow));
    const int B = s[0], C = s[1], H = s[2], W = s[3];
    if (oh == H && ow == W) return x;  // no-op resize
    Tensor<T> out({B, C, oh, ow});
    kernels::bilinear_resize_forward(x->val.data(), out.data(), B, C, H, W, oh, ow);
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, B, C, H, W, oh, ow] {
            if (!o->has_grad()) return;
            kernels::bilinear_resize_backward(o->grad.data(), x->ensure_grad().data(), B, C, H, W, oh, ow);
        });
    return o;
}

template <typename T>
Value<T>* pixel_shuffle2(Tape<T>& tp, Value<T>* x) {
    const auto& s = x->val.shape();
    if (s.size() != 4) throw ShapeError("pixel_shuffle2: expect 4-D input");
    if (s[1] % 4 != 0) throw ShapeError("pixel_shuffle2: channels must be divisible by 4");
    const int B = s[0], C = s[1] / 4, H = s[2], W = s[3];
    Tensor<T> out({B, C, 2 * H, 2 * W});
    kernels::pixel_shuffle2_forward(x->val.data(), out.data(), B, C, H, W);
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, B, C, H, W] {
            if (!o->has_grad()) return;
            kernels::pixel_shuffle2_backward(o->grad.data(), x->ensure_grad().data(), B, C, H, W);
        });
    return o;
}

// --------------------------- reductions -----------------------------------

template <typename T>
Value<T>* mean_all(Tape<T>& tp, Value<T>* x) {
    const size_t n = x->val.size();
    const T* px = x->val.data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(n));
    Value<T>* o = tp.make(std::move(out), x->requires_grad);
    if (o->requires_grad)
        tp.record([x, o, n] {
            if (!o->has_grad()) return;
            const T g = o->grad[0] / static_cast<T>(n);
            T* dx = x->ensure_grad().data();
            ew_loop(n, [=](size_t i) { dx[i] += g; });
        });
    return o;
}

// mean |a - b|
template <typename T>
Value<T>* l1_loss(Tape<T>& tp, Value<T>* a, Value<T>* b) {
    check_same_shape(a->val, b->val, "l1_loss");
    const size_t n = a->val.size();
    const T* pa = a->val.data();
    const T* pb = b->val.data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(n));
    Value<T>* o = tp.make(std::move(out), a->requires_grad || b->requires_grad);
    if (o->requires_grad)
        tp.record([a, b, o, n] {
            if (!o->has_grad()) return;
            const T g = o->grad[0] / static_cast<T>(n);
            const T* pa2 = a->val.data();
            const T* pb2 = b->val.data();
            if (a->requires_grad) {
                T* da = a->ensure_grad().data();
                ew_loop(n, [=](size_t i) { da[i] += (pa2[i] > pb2[i] ? g : (pa2[i] < pb2[i] ? -g : T(0))); });
            }
            if (b->requires_grad) {
                T* db = b->ensure_grad().data();
                ew_loop(n, [=](size_t i) { db[i] += (pa2[i] > pb2[i] ? -g : (pa2[i] < pb2[i] ? g : T(0))); });
            }
        });
    return o;
}

}  // namespace ag

// Central finite differences of a scalar functional w.r.t. one tensor entry.
template <typename T, class F>
double numeric_grad(F&& f, Tensor<T>& x, size_t idx, double step = 1e-5) {
    const T orig = x[idx];
    x[idx] = orig + static_cast<T>(step);
    const double fp = f();
    x[idx] = orig - static_cast<T>(step);
    const double fm = f();
    x[idx] = orig;
    return (fp - fm) / (2.0 * step);
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / denom;
}

}  // namespace tdpcr
