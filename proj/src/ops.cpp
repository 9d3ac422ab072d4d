#include "spikeforge/ops.hpp"

#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

namespace spikeforge {

namespace {

// --------------------------------------------------------------------------
// GEMM: row-major C[m,n] = op(A)[m,k] * op(B)[k,n], via the packed kernel.

template <typename T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    detail::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// --------------------------------------------------------------------------
// Recording helpers

template <typename T>
bool grad_wanted(std::initializer_list<const Tensor<T>*> inputs) {
    if (!active_graph<T>()) return false;
    for (const auto* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void record_node(const char* op, std::vector<Tensor<T>> inputs, std::vector<Tensor<T>> outputs,
                 std::function<void()> backward) {
    for (auto& out : outputs) out.set_requires_grad(true);
    active_graph<T>()->record(op, std::move(inputs), std::move(outputs), std::move(backward));
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

// out.grad()[i] might be absent when only part of a node's outputs received
// gradient; treat missing grad as zero.
template <typename T>
std::span<const T> grad_or_empty(const Tensor<T>& t) {
    return t.has_grad() ? t.grad() : std::span<const T>{};
}

// --------------------------------------------------------------------------
// Elementwise helpers

template <typename T, typename FwdFn>
Tensor<T> map_elementwise(const char* name, const Tensor<T>& x, FwdFn&& f) {
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* xd = x.data().data();
    T* od = out.data().data();
    parallel_for(x.size(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) od[i] = f(xd[i]);
    });
    (void)name;
    return out;
}

}  // namespace

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    Tensor<T> out = Tensor<T>::uninitialized(a.shape());
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    parallel_for(out.size(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) od[i] = ad[i] + bd[i];
    });
    if (grad_wanted({&a, &b})) {
        Tensor<T> av = a, bv = b, ov = out;
        record_node<T>("add", {a, b}, {out}, [av, bv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            if (av.requires_grad()) av.accumulate_grad(go);
            if (bv.requires_grad()) bv.accumulate_grad(go);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("sub", a, b);
    Tensor<T> out = Tensor<T>::uninitialized(a.shape());
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    parallel_for(out.size(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) od[i] = ad[i] - bd[i];
    });
    if (grad_wanted({&a, &b})) {
        Tensor<T> av = a, bv = b, ov = out;
        record_node<T>("sub", {a, b}, {out}, [av, bv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            if (av.requires_grad()) av.accumulate_grad(go);
            if (bv.requires_grad()) bv.accumulate_grad_scaled(go, T(-1));
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    Tensor<T> out = Tensor<T>::uninitialized(a.shape());
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    parallel_for(out.size(), [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) od[i] = ad[i] * bd[i];
    });
    if (grad_wanted({&a, &b})) {
        Tensor<T> av = a, bv = b, ov = out;
        record_node<T>("mul", {a, b}, {out}, [av, bv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            const T* gd = go.data();
            if (av.requires_grad()) {
                av.ensure_grad();
                T* ga = av.grad().data();
                const T* bd2 = bv.data().data();
                parallel_for(av.size(), [&](std::int64_t s, std::int64_t e) {
                    for (std::int64_t i = s; i < e; ++i) ga[i] += bd2[i] * gd[i];
                });
            }
            if (bv.requires_grad()) {
                bv.ensure_grad();
                T* gb = bv.grad().data();
                const T* ad2 = av.data().data();
                parallel_for(bv.size(), [&](std::int64_t s, std::int64_t e) {
                    for (std::int64_t i = s; i < e; ++i) gb[i] += ad2[i] * gd[i];
                });
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = map_elementwise("add_scalar", a, [c](T v) { return v + c; });
    if (grad_wanted({&a})) {
        Tensor<T> av = a, ov = out;
        record_node<T>("add_scalar", {a}, {out}, [av, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (!go.empty() && av.requires_grad()) av.accumulate_grad(go);
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = map_elementwise("mul_scalar", a, [c](T v) { return v * c; });
    if (grad_wanted({&a})) {
        Tensor<T> av = a, ov = out;
        record_node<T>("mul_scalar", {a}, {out}, [av, ov, c]() mutable {
            auto go = grad_or_empty(ov);
            if (!go.empty() && av.requires_grad()) av.accumulate_grad_scaled(go, c);
        });
    }
    return out;
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::uninitialized({m, n});
    gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
         out.data().data(), n);
    if (grad_wanted({&a, &b})) {
        Tensor<T> av = a, bv = b, ov = out;
        record_node<T>("matmul", {a, b}, {out}, [av, bv, ov, m, n, k]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            if (av.requires_grad()) {
                av.ensure_grad();
                // dA += dC * B^T
                gemm(false, true, m, k, n, T(1), go.data(), n, bv.data().data(), n, T(1),
                     av.grad().data(), k);
            }
            if (bv.requires_grad()) {
                bv.ensure_grad();
                // dB += A^T * dC
                gemm(true, false, k, n, m, T(1), av.data().data(), k, go.data(), n, T(1),
                     bv.grad().data(), n);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.rank() != 2 || w.rank() != 2) {
        throw std::invalid_argument("linear: expects rank-2 input and weight, got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(0)) {
        throw std::invalid_argument("linear: inner dimensions mismatch: " + shape_str(x.shape()) +
                                    " vs " + shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != m)) {
        throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()) +
                                    " does not match output width " + std::to_string(m));
    }
    Tensor<T> out = Tensor<T>::uninitialized({n, m});
    gemm(false, false, n, m, k, T(1), x.data().data(), k, w.data().data(), m, T(0),
         out.data().data(), m);
    if (bias.defined()) {
        const T* bd = bias.data().data();
        T* od = out.data().data();
        parallel_for(n, [&](std::int64_t rb, std::int64_t re) {
            for (std::int64_t r = rb; r < re; ++r) {
                T* row = od + r * m;
                for (std::int64_t c = 0; c < m; ++c) row[c] += bd[c];
            }
        });
    }
    if (grad_wanted({&x, &w, &bias})) {
        Tensor<T> xv = x, wv = w, bv = bias, ov = out;
        record_node<T>("linear", bias.defined() ? std::vector<Tensor<T>>{x, w, bias}
                                                : std::vector<Tensor<T>>{x, w},
                       {out}, [xv, wv, bv, ov, n, k, m]() mutable {
                           auto go = grad_or_empty(ov);
                           if (go.empty()) return;
                           if (xv.requires_grad()) {
                               xv.ensure_grad();
                               gemm(false, true, n, k, m, T(1), go.data(), m, wv.data().data(), m,
                                    T(1), xv.grad().data(), k);
                           }
                           if (wv.requires_grad()) {
                               wv.ensure_grad();
                               gemm(true, false, k, m, n, T(1), xv.data().data(), k, go.data(), m,
                                    T(1), wv.grad().data(), m);
                           }
                           if (bv.defined() && bv.requires_grad()) {
                               bv.ensure_grad();
                               T* gb = bv.grad().data();
                               const T* gd = go.data();
                               for (std::int64_t r = 0; r < n; ++r) {
                                   for (std::int64_t c = 0; c < m; ++c) gb[c] += gd[r * m + c];
                               }
                           }
                       });
    }
    return out;
}

// --------------------------------------------------------------------------
// conv2d: stride 1, zero padding, via im2col + GEMM.
//
// col layout is [M, K] with M = N*Ho*Wo output positions and K = C*kh*kw;
// each output position owns one contiguous K-run, which keeps both the
// builder and the GEMM packing cache friendly.

namespace {

template <typename T>
std::vector<T>& conv_scratch_col() {
    static thread_local std::vector<T> buf;
    return buf;
}

template <typename T>
std::vector<T>& conv_scratch_mat() {
    static thread_local std::vector<T> buf;
    return buf;
}

struct ConvDims {
    std::int64_t n, c, h, w, o, kh, kw, pad, ho, wo;
    std::int64_t K() const { return c * kh * kw; }
    std::int64_t M() const { return n * ho * wo; }
};

template <typename T, int KW>
void im2col_kw(const T* x, const ConvDims& d, T* col) {
    const std::int64_t K = d.K(), HoWo = d.ho * d.wo;
    const std::int64_t kw = KW > 0 ? KW : d.kw;
    // One sample at a time; its [C,H,W] slab is small enough to stay hot.
    parallel_for(d.n, [&](std::int64_t nb, std::int64_t ne) {
        for (std::int64_t nn = nb; nn < ne; ++nn) {
            const T* xn = x + nn * d.c * d.h * d.w;
            T* coln = col + nn * HoWo * K;
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                T* dst = coln + ho * d.wo * K;
                const std::int64_t hi0 = ho - d.pad;
                const bool h_ok = hi0 >= 0 && hi0 + d.kh <= d.h;
                for (std::int64_t wo = 0; wo < d.wo; ++wo, dst += K) {
                    const std::int64_t wi0 = wo - d.pad;
                    const bool interior = h_ok && wi0 >= 0 && wi0 + kw <= d.w;
                    if (interior) {
                        const T* base = xn + hi0 * d.w + wi0;
                        T* __restrict dc = dst;
                        for (std::int64_t c = 0; c < d.c; ++c) {
                            const T* __restrict xrow = base + c * d.h * d.w;
                            for (std::int64_t i = 0; i < d.kh; ++i, xrow += d.w, dc += kw) {
                                for (std::int64_t j = 0; j < kw; ++j) dc[j] = xrow[j];
                            }
                        }
                        continue;
                    }
                    for (std::int64_t c = 0; c < d.c; ++c) {
                        const T* xc = xn + c * d.h * d.w;
                        T* dc = dst + c * d.kh * kw;
                        for (std::int64_t i = 0; i < d.kh; ++i) {
                            const std::int64_t hi = hi0 + i;
                            T* drow = dc + i * kw;
                            if (hi < 0 || hi >= d.h) {
                                for (std::int64_t j = 0; j < kw; ++j) drow[j] = T(0);
                                continue;
                            }
                            const T* xrow = xc + hi * d.w;
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t wi = wi0 + j;
                                drow[j] = (wi >= 0 && wi < d.w) ? xrow[wi] : T(0);
                            }
                        }
                    }
                }
            }
        }
    }, 2);
}

template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
    switch (d.kw) {
        case 3:
            im2col_kw<T, 3>(x, d, col);
            return;
        case 5:
            im2col_kw<T, 5>(x, d, col);
            return;
        default:
            im2col_kw<T, 0>(x, d, col);
            return;
    }
}

// Scatter-add of dcol[M, K] back into dx; chunked on sample boundaries so
// overlapping windows of one sample never race.
template <typename T, int KW>
void col2im_add_kw(const T* dcol, const ConvDims& d, T* dx) {
    const std::int64_t K = d.K(), HoWo = d.ho * d.wo;
    const std::int64_t kw = KW > 0 ? KW : d.kw;
    parallel_for(d.n, [&](std::int64_t nb, std::int64_t ne) {
        for (std::int64_t nn = nb; nn < ne; ++nn) {
            T* xn = dx + nn * d.c * d.h * d.w;
            const T* srcn = dcol + nn * HoWo * K;
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                const T* src = srcn + ho * d.wo * K;
                const std::int64_t hi0 = ho - d.pad;
                const bool h_ok = hi0 >= 0 && hi0 + d.kh <= d.h;
                for (std::int64_t wo = 0; wo < d.wo; ++wo, src += K) {
                    const std::int64_t wi0 = wo - d.pad;
                    const bool interior = h_ok && wi0 >= 0 && wi0 + kw <= d.w;
                    if (interior) {
                        T* base = xn + hi0 * d.w + wi0;
                        const T* __restrict sc = src;
                        for (std::int64_t c = 0; c < d.c; ++c) {
                            T* __restrict xrow = base + c * d.h * d.w;
                            for (std::int64_t i = 0; i < d.kh; ++i, xrow += d.w, sc += kw) {
                                for (std::int64_t j = 0; j < kw; ++j) xrow[j] += sc[j];
                            }
                        }
                        continue;
                    }
                    for (std::int64_t c = 0; c < d.c; ++c) {
                        T* xc = xn + c * d.h * d.w;
                        const T* sc = src + c * d.kh * kw;
                        for (std::int64_t i = 0; i < d.kh; ++i) {
                            const std::int64_t hi = hi0 + i;
                            if (hi < 0 || hi >= d.h) continue;
                            T* xrow = xc + hi * d.w;
                            const T* srow = sc + i * kw;
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t wi = wi0 + j;
                                if (wi >= 0 && wi < d.w) xrow[wi] += srow[j];
                            }
                        }
                    }
                }
            }
        }
    }, 2);
}

template <typename T>
void col2im_add(const T* dcol, const ConvDims& d, T* dx) {
    switch (d.kw) {
        case 3:
            col2im_add_kw<T, 3>(dcol, d, dx);
            return;
        case 5:
            col2im_add_kw<T, 5>(dcol, d, dx);
            return;
        default:
            col2im_add_kw<T, 0>(dcol, d, dx);
            return;
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t padding) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw std::invalid_argument("conv2d: expects x[N,C,H,W] and w[O,C,kh,kw], got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw std::invalid_argument("conv2d: channel mismatch: " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    }
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), padding, 0, 0};
    d.ho = d.h + 2 * padding - d.kh + 1;
    d.wo = d.w + 2 * padding - d.kw + 1;
    if (d.ho <= 0 || d.wo <= 0) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) +
                                    " does not fit input " + shape_str(x.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.o)) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                    " does not match filter count " + std::to_string(d.o));
    }

    const std::int64_t K = d.K(), M = d.M(), HoWo = d.ho * d.wo;
    auto& col = conv_scratch_col<T>();
    col.resize(static_cast<std::size_t>(M * K));
    im2col(x.data().data(), d, col.data());

    auto& y = conv_scratch_mat<T>();
    y.resize(static_cast<std::size_t>(d.o * M));
    // y[O, M] = w[O, K] * col[M, K]^T
    gemm(false, true, d.o, M, K, T(1), w.data().data(), K, col.data(), K, T(0), y.data(), M);

    Tensor<T> out = Tensor<T>::uninitialized({d.n, d.o, d.ho, d.wo});
    T* od = out.data().data();
    const T* bd = bias.defined() ? bias.data().data() : nullptr;
    parallel_for(d.n * d.o, [&](std::int64_t rb, std::int64_t re) {
        for (std::int64_t r = rb; r < re; ++r) {
            const std::int64_t nn = r / d.o;
            const std::int64_t o = r % d.o;
            const T* src = y.data() + o * M + nn * HoWo;
            T* dst = od + r * HoWo;
            const T bv = bd ? bd[o] : T(0);
            for (std::int64_t i = 0; i < HoWo; ++i) dst[i] = src[i] + bv;
        }
    }, 64);

    if (grad_wanted({&x, &w, &bias})) {
        Tensor<T> xv = x, wv = w, bv = bias, ov = out;
        std::vector<Tensor<T>> ins = bias.defined() ? std::vector<Tensor<T>>{x, w, bias}
                                                    : std::vector<Tensor<T>>{x, w};
        record_node<T>("conv2d", std::move(ins), {out}, [xv, wv, bv, ov, d]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            const std::int64_t K = d.K(), M = d.M(), HoWo = d.ho * d.wo;

            // Gather dY[O, M] from the [N, O, Ho, Wo] gradient.
            auto& dy = conv_scratch_mat<T>();
            dy.resize(static_cast<std::size_t>(d.o * M));
            const T* gd = go.data();
            parallel_for(d.n * d.o, [&](std::int64_t rb, std::int64_t re) {
                for (std::int64_t r = rb; r < re; ++r) {
                    const std::int64_t nn = r / d.o;
                    const std::int64_t o = r % d.o;
                    T* dst = dy.data() + o * M + nn * HoWo;
                    const T* src = gd + r * HoWo;
                    for (std::int64_t i = 0; i < HoWo; ++i) dst[i] = src[i];
                }
            }, 64);

            if (bv.defined() && bv.requires_grad()) {
                bv.ensure_grad();
                T* gb = bv.grad().data();
                parallel_for(d.o, [&](std::int64_t ob, std::int64_t oe) {
                    for (std::int64_t o = ob; o < oe; ++o) {
                        gb[o] += static_cast<T>(sum_range(dy.data() + o * M, M));
                    }
                }, 2);
            }

            if (wv.requires_grad()) {
                auto& col = conv_scratch_col<T>();
                col.resize(static_cast<std::size_t>(M * K));
                im2col(xv.data().data(), d, col.data());
                wv.ensure_grad();
                // dW[O, K] += dY[O, M] * col[M, K]
                gemm(false, false, d.o, K, M, T(1), dy.data(), M, col.data(), K, T(1),
                     wv.grad().data(), K);
            }

            if (xv.requires_grad()) {
                auto& dcol = conv_scratch_col<T>();
                dcol.resize(static_cast<std::size_t>(M * K));
                // dcol[M, K] = dY[O, M]^T * w[O, K]
                gemm(true, false, M, K, d.o, T(1), dy.data(), M, wv.data().data(), K, T(0),
                     dcol.data(), K);
                xv.ensure_grad();
                col2im_add(dcol.data(), d, xv.grad().data());
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> avgpool2x2(const Tensor<T>& x) {
    if (x.rank() != 4) {
        throw std::invalid_argument("avgpool2x2: expects x[N,C,H,W], got " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) {
        throw std::invalid_argument("avgpool2x2: input too small: " + shape_str(x.shape()));
    }
    Tensor<T> out = Tensor<T>::uninitialized({n, c, ho, wo});
    const T* xd = x.data().data();
    T* od = out.data().data();
    parallel_for(n * c, [&](std::int64_t pb, std::int64_t pe) {
        for (std::int64_t p = pb; p < pe; ++p) {
            const T* xp = xd + p * h * w;
            T* op = od + p * ho * wo;
            for (std::int64_t i = 0; i < ho; ++i) {
                const T* r0 = xp + (2 * i) * w;
                const T* r1 = r0 + w;
                T* orow = op + i * wo;
                for (std::int64_t j = 0; j < wo; ++j) {
                    orow[j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
                }
            }
        }
    }, 16);
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("avgpool2x2", {x}, {out}, [xv, ov, n, c, h, w, ho, wo]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* gd = go.data();
            parallel_for(n * c, [&](std::int64_t pb, std::int64_t pe) {
                for (std::int64_t p = pb; p < pe; ++p) {
                    T* xp = gx + p * h * w;
                    const T* op = gd + p * ho * wo;
                    for (std::int64_t i = 0; i < ho; ++i) {
                        T* r0 = xp + (2 * i) * w;
                        T* r1 = r0 + w;
                        const T* orow = op + i * wo;
                        for (std::int64_t j = 0; j < wo; ++j) {
                            const T g = orow[j] * T(0.25);
                            r0[2 * j] += g;
                            r0[2 * j + 1] += g;
                            r1[2 * j] += g;
                            r1[2 * j + 1] += g;
                        }
                    }
                }
            }, 16);
        });
    }
    return out;
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = map_elementwise("relu", x, [](T v) { return v > T(0) ? v : T(0); });
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("relu", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* xd = xv.data().data();
            const T* gd = go.data();
            parallel_for(xv.size(), [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) {
                    if (xd[i] > T(0)) gx[i] += gd[i];
                }
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    Tensor<T> out = map_elementwise("exp", x, [](T v) { return std::exp(v); });
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("exp", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* od = ov.data().data();
            const T* gd = go.data();
            parallel_for(xv.size(), [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) gx[i] += od[i] * gd[i];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    Tensor<T> out = map_elementwise("log", x, [](T v) { return std::log(v); });
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("log", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* xd = xv.data().data();
            const T* gd = go.data();
            parallel_for(xv.size(), [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) gx[i] += gd[i] / xd[i];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    Tensor<T> out = map_elementwise("square", x, [](T v) { return v * v; });
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("square", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* xd = xv.data().data();
            const T* gd = go.data();
            parallel_for(xv.size(), [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) gx[i] += T(2) * xd[i] * gd[i];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    Tensor<T> out = map_elementwise("sqrt", x, [](T v) { return std::sqrt(v); });
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("sqrt", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* od = ov.data().data();
            const T* gd = go.data();
            parallel_for(xv.size(), [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) gx[i] += gd[i] / (T(2) * od[i]);
            });
        });
    }
    return out;
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const T* xd = x.data().data();
    const double total = parallel_sum(x.size(), [&](std::int64_t b, std::int64_t e) {
        return sum_range(xd + b, e - b);
    });
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("sum", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.accumulate_grad_broadcast(go[0]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
    const T inv = T(1) / static_cast<T>(x.size());
    const T* xd = x.data().data();
    const double total = parallel_sum(x.size(), [&](std::int64_t b, std::int64_t e) {
        return sum_range(xd + b, e - b);
    });
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total) * inv);
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("mean", {x}, {out}, [xv, ov, inv]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.accumulate_grad_broadcast(go[0] * inv);
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    }
    Tensor<T> out = Tensor<T>::uninitialized(std::move(new_shape));
    std::memcpy(out.data().data(), x.data().data(),
                sizeof(T) * static_cast<std::size_t>(x.size()));
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("reshape", {x}, {out}, [xv, ov]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.accumulate_grad(go);
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_over_time(std::span<const Tensor<T>> steps) {
    if (steps.empty()) throw std::invalid_argument("concat_over_time: no inputs");
    const Shape& step_shape = steps[0].shape();
    for (const auto& s : steps) {
        if (s.shape() != step_shape) {
            throw std::invalid_argument("concat_over_time: step shape mismatch: " +
                                        shape_str(step_shape) + " vs " + shape_str(s.shape()));
        }
    }
    Shape out_shape;
    out_shape.reserve(step_shape.size() + 1);
    out_shape.push_back(static_cast<std::int64_t>(steps.size()));
    out_shape.insert(out_shape.end(), step_shape.begin(), step_shape.end());
    Tensor<T> out = Tensor<T>::uninitialized(std::move(out_shape));
    const std::int64_t step_size = steps[0].size();
    T* od = out.data().data();
    for (std::size_t t = 0; t < steps.size(); ++t) {
        std::memcpy(od + static_cast<std::int64_t>(t) * step_size, steps[t].data().data(),
                    sizeof(T) * static_cast<std::size_t>(step_size));
    }
    bool want = false;
    if (active_graph<T>()) {
        for (const auto& s : steps) want = want || s.requires_grad();
    }
    if (want) {
        std::vector<Tensor<T>> ins(steps.begin(), steps.end());
        Tensor<T> ov = out;
        record_node<T>("concat_over_time", ins, {out}, [ins, ov, step_size]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty()) return;
            for (std::size_t t = 0; t < ins.size(); ++t) {
                if (!ins[t].requires_grad()) continue;
                ins[t].accumulate_grad(
                    go.subspan(static_cast<std::size_t>(t) * static_cast<std::size_t>(step_size),
                               static_cast<std::size_t>(step_size)));
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> per_sample_sum_over_time(const Tensor<T>& x, std::int64_t timesteps) {
    if (x.rank() < 1 || timesteps < 1 || x.dim(0) % timesteps != 0) {
        throw std::invalid_argument("per_sample_sum_over_time: leading dim of " +
                                    shape_str(x.shape()) + " is not divisible by T=" +
                                    std::to_string(timesteps));
    }
    const std::int64_t rows = x.dim(0);
    const std::int64_t batch = rows / timesteps;
    const std::int64_t row_len = x.size() / rows;
    std::vector<double> row_sums(static_cast<std::size_t>(rows), 0.0);
    const T* xd = x.data().data();
    parallel_for(rows, [&](std::int64_t rb, std::int64_t re) {
        for (std::int64_t r = rb; r < re; ++r) {
            row_sums[static_cast<std::size_t>(r)] = sum_range(xd + r * row_len, row_len);
        }
    }, 16);
    Tensor<T> out = Tensor<T>::uninitialized({batch});
    T* od = out.data().data();
    for (std::int64_t b = 0; b < batch; ++b) {
        double acc = 0;
        for (std::int64_t t = 0; t < timesteps; ++t) {
            acc += row_sums[static_cast<std::size_t>(t * batch + b)];
        }
        od[b] = static_cast<T>(acc);
    }
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("per_sample_sum_over_time", {x}, {out},
                       [xv, ov, timesteps, batch, row_len]() mutable {
                           auto go = grad_or_empty(ov);
                           if (go.empty() || !xv.requires_grad()) return;
                           xv.ensure_grad();
                           T* gx = xv.grad().data();
                           const T* gd = go.data();
                           parallel_for(timesteps * batch, [&](std::int64_t rb, std::int64_t re) {
                               for (std::int64_t r = rb; r < re; ++r) {
                                   const T g = gd[r % batch];
                                   T* p = gx + r * row_len;
                                   for (std::int64_t i = 0; i < row_len; ++i) p[i] += g;
                               }
                           }, 16);
                       });
    }
    return out;
}

template <typename T>
Tensor<T> time_average(const Tensor<T>& x, std::int64_t timesteps) {
    if (x.rank() != 2 || timesteps < 1 || x.dim(0) % timesteps != 0) {
        throw std::invalid_argument("time_average: expects [T*B, C] with T=" +
                                    std::to_string(timesteps) + ", got " + shape_str(x.shape()));
    }
    const std::int64_t batch = x.dim(0) / timesteps;
    const std::int64_t cols = x.dim(1);
    const T inv = T(1) / static_cast<T>(timesteps);
    Tensor<T> out = Tensor<T>::zeros({batch, cols});
    const T* xd = x.data().data();
    T* od = out.data().data();
    for (std::int64_t t = 0; t < timesteps; ++t) {
        const T* src = xd + t * batch * cols;
        for (std::int64_t i = 0; i < batch * cols; ++i) od[i] += src[i];
    }
    for (std::int64_t i = 0; i < batch * cols; ++i) od[i] *= inv;
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("time_average", {x}, {out}, [xv, ov, timesteps, batch, cols, inv]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* gd = go.data();
            for (std::int64_t t = 0; t < timesteps; ++t) {
                T* dst = gx + t * batch * cols;
                for (std::int64_t i = 0; i < batch * cols; ++i) dst[i] += gd[i] * inv;
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------

namespace {

template <typename T>
std::pair<std::int64_t, std::int64_t> softmax_dims(const char* op, const Tensor<T>& x) {
    if (x.rank() == 1) return {1, x.dim(0)};
    if (x.rank() == 2) return {x.dim(0), x.dim(1)};
    throw std::invalid_argument(std::string(op) + ": expects [C] or [N,C], got " +
                                shape_str(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> softmax_t(const Tensor<T>& x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_t: temperature must be > 0");
    auto [rows, cols] = softmax_dims("softmax_t", x);
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* xd = x.data().data();
    T* od = out.data().data();
    const T itau = static_cast<T>(1.0 / tau);
    parallel_for(rows, [&](std::int64_t rb, std::int64_t re) {
        for (std::int64_t r = rb; r < re; ++r) {
            const T* xr = xd + r * cols;
            T* orow = od + r * cols;
            T mx = xr[0];
            for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
            T denom = 0;
            for (std::int64_t c = 0; c < cols; ++c) {
                orow[c] = std::exp((xr[c] - mx) * itau);
                denom += orow[c];
            }
            const T inv = T(1) / denom;
            for (std::int64_t c = 0; c < cols; ++c) orow[c] *= inv;
        }
    }, 256);
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("softmax_t", {x}, {out}, [xv, ov, rows, cols, itau]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* p = ov.data().data();
            const T* gd = go.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* pr = p + r * cols;
                const T* gr = gd + r * cols;
                T dot = 0;
                for (std::int64_t c = 0; c < cols; ++c) dot += gr[c] * pr[c];
                T* gxr = gx + r * cols;
                for (std::int64_t c = 0; c < cols; ++c) {
                    gxr[c] += pr[c] * (gr[c] - dot) * itau;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax_t(const Tensor<T>& x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("log_softmax_t: temperature must be > 0");
    auto [rows, cols] = softmax_dims("log_softmax_t", x);
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* xd = x.data().data();
    T* od = out.data().data();
    const T itau = static_cast<T>(1.0 / tau);
    parallel_for(rows, [&](std::int64_t rb, std::int64_t re) {
        for (std::int64_t r = rb; r < re; ++r) {
            const T* xr = xd + r * cols;
            T* orow = od + r * cols;
            T mx = xr[0];
            for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
            T denom = 0;
            for (std::int64_t c = 0; c < cols; ++c) {
                orow[c] = (xr[c] - mx) * itau;
                denom += std::exp(orow[c]);
            }
            const T lse = std::log(denom);
            for (std::int64_t c = 0; c < cols; ++c) orow[c] -= lse;
        }
    }, 256);
    if (grad_wanted({&x})) {
        Tensor<T> xv = x, ov = out;
        record_node<T>("log_softmax_t", {x}, {out}, [xv, ov, rows, cols, itau]() mutable {
            auto go = grad_or_empty(ov);
            if (go.empty() || !xv.requires_grad()) return;
            xv.ensure_grad();
            T* gx = xv.grad().data();
            const T* lp = ov.data().data();
            const T* gd = go.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* lr = lp + r * cols;
                const T* gr = gd + r * cols;
                T gsum = 0;
                for (std::int64_t c = 0; c < cols; ++c) gsum += gr[c];
                T* gxr = gx + r * cols;
                for (std::int64_t c = 0; c < cols; ++c) {
                    gxr[c] += (gr[c] - std::exp(lr[c]) * gsum) * itau;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("cross_entropy: expects logits[N,C], got " +
                                    shape_str(logits.shape()));
    }
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw std::invalid_argument("cross_entropy: got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || y >= c) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(c) + ")");
        }
    }
    // Stable per-row -log softmax[label]; softmax rows are kept for backward.
    std::vector<T> probs(static_cast<std::size_t>(n * c));
    const T* xd = logits.data().data();
    double total = 0;
    for (std::int64_t r = 0; r < n; ++r) {
        const T* xr = xd + r * c;
        T* pr = probs.data() + r * c;
        T mx = xr[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T denom = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            denom += pr[j];
        }
        const T inv = T(1) / denom;
        for (std::int64_t j = 0; j < c; ++j) pr[j] *= inv;
        total += -(static_cast<double>(xr[labels[static_cast<std::size_t>(r)]] - mx) -
                   std::log(static_cast<double>(denom)));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    if (grad_wanted({&logits})) {
        Tensor<T> xv = logits, ov = out;
        record_node<T>("cross_entropy", {logits}, {out},
                       [xv, ov, probs = std::move(probs), labels, n, c]() mutable {
                           auto go = grad_or_empty(ov);
                           if (go.empty() || !xv.requires_grad()) return;
                           xv.ensure_grad();
                           T* gx = xv.grad().data();
                           const T scale = go[0] / static_cast<T>(n);
                           for (std::int64_t r = 0; r < n; ++r) {
                               const T* pr = probs.data() + r * c;
                               T* gr = gx + r * c;
                               const int y = labels[static_cast<std::size_t>(r)];
                               for (std::int64_t j = 0; j < c; ++j) {
                                   const T onehot = (j == y) ? T(1) : T(0);
                                   gr[j] += (pr[j] - onehot) * scale;
                               }
                           }
                       });
    }
    return out;
}

// --------------------------------------------------------------------------

template <typename T>
Tensor<T> forward_primitive(PrimitiveOp op, std::span<const Tensor<T>> inputs,
                            const PrimitiveAttrs& attrs) {
    auto need = [&](std::size_t k, const char* name) {
        if (inputs.size() != k) {
            throw std::invalid_argument(std::string(name) + ": expects " + std::to_string(k) +
                                        " inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (op) {
        case PrimitiveOp::Add:
            need(2, "add");
            return add(inputs[0], inputs[1]);
        case PrimitiveOp::Sub:
            need(2, "sub");
            return sub(inputs[0], inputs[1]);
        case PrimitiveOp::Mul:
            need(2, "mul");
            return mul(inputs[0], inputs[1]);
        case PrimitiveOp::MatMul:
            need(2, "matmul");
            return matmul(inputs[0], inputs[1]);
        case PrimitiveOp::Conv2d:
            if (inputs.size() == 2) return conv2d(inputs[0], inputs[1], Tensor<T>{}, attrs.padding);
            need(3, "conv2d");
            return conv2d(inputs[0], inputs[1], inputs[2], attrs.padding);
        case PrimitiveOp::AvgPool2x2:
            need(1, "avgpool2x2");
            return avgpool2x2(inputs[0]);
        case PrimitiveOp::Relu:
            need(1, "relu");
            return relu(inputs[0]);
        case PrimitiveOp::Exp:
            need(1, "exp");
            return exp(inputs[0]);
        case PrimitiveOp::Log:
            need(1, "log");
            return log(inputs[0]);
        case PrimitiveOp::Square:
            need(1, "square");
            return square(inputs[0]);
        case PrimitiveOp::Sqrt:
            need(1, "sqrt");
            return sqrt(inputs[0]);
        case PrimitiveOp::Sum:
            need(1, "sum");
            return sum(inputs[0]);
        case PrimitiveOp::Mean:
            need(1, "mean");
            return mean(inputs[0]);
        case PrimitiveOp::Reshape:
            need(1, "reshape");
            return reshape(inputs[0], attrs.reshape_to);
        case PrimitiveOp::ConcatOverTime:
            return concat_over_time(inputs);
    }
    throw std::invalid_argument("forward_primitive: unknown op");
}

#define SPIKEFORGE_OPS_INSTANTIATE(T)                                                        \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                  \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                  \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                 std::int64_t);                                             \
    template Tensor<T> avgpool2x2<T>(const Tensor<T>&);                                     \
    template Tensor<T> relu<T>(const Tensor<T>&);                                           \
    template Tensor<T> exp<T>(const Tensor<T>&);                                            \
    template Tensor<T> log<T>(const Tensor<T>&);                                            \
    template Tensor<T> square<T>(const Tensor<T>&);                                         \
    template Tensor<T> sqrt<T>(const Tensor<T>&);                                           \
    template Tensor<T> sum<T>(const Tensor<T>&);                                            \
    template Tensor<T> mean<T>(const Tensor<T>&);                                           \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
    template Tensor<T> concat_over_time<T>(std::span<const Tensor<T>>);                     \
    template Tensor<T> per_sample_sum_over_time<T>(const Tensor<T>&, std::int64_t);         \
    template Tensor<T> time_average<T>(const Tensor<T>&, std::int64_t);                     \
    template Tensor<T> softmax_t<T>(const Tensor<T>&, double);                              \
    template Tensor<T> log_softmax_t<T>(const Tensor<T>&, double);                          \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);         \
    template Tensor<T> forward_primitive<T>(PrimitiveOp, std::span<const Tensor<T>>,        \
                                            const PrimitiveAttrs&);

SPIKEFORGE_OPS_INSTANTIATE(float)
SPIKEFORGE_OPS_INSTANTIATE(double)
#undef SPIKEFORGE_OPS_INSTANTIATE

}  // namespace spikeforge
