#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hycas/tensor.hpp"

namespace hycas {

enum class Padding { kCircular, kZero };

namespace detail {

inline int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}

inline Shape conv_output_shape(const Shape& in, const Shape& kernel, Padding pad, int stride) {
    if (in.size() != 3) throw std::invalid_argument("conv2d input must be (H,W,C), got " + shape_str(in));
    if (kernel.size() != 4)
        throw std::invalid_argument("conv2d kernel must be (kh,kw,Cin,Cout), got " + shape_str(kernel));
    if (kernel[2] != in[2])
        throw std::invalid_argument("conv2d kernel expects " + std::to_string(kernel[2]) +
                                    " input channels, input has " + std::to_string(in[2]));
    if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    if (pad == Padding::kCircular) {
        if (kernel[0] > in[0] || kernel[1] > in[1])
            throw std::invalid_argument("circular conv2d requires kernel extents <= input extents");
        if (in[0] % stride != 0 || in[1] % stride != 0)
            throw std::invalid_argument("circular conv2d requires spatial dims divisible by stride");
        return {in[0] / stride, in[1] / stride, kernel[3]};
    }
    return {(in[0] + stride - 1) / stride, (in[1] + stride - 1) / stride, kernel[3]};
}

// out(yo,xo,co) = sum_{p,q,ci} K(p,q,ci,co) * in(yo*s + p - ay, xo*s + q - ax, ci)
// with the anchor at (kh/2, kw/2); out-of-range inputs wrap (circular) or read zero.
inline void conv2d_forward(const Tensor& in, const Tensor& kernel, Padding pad, int stride,
                           Tensor& out) {
    const int H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
    const int kh = kernel.shape[0], kw = kernel.shape[1], Cout = kernel.shape[3];
    const int ay = kh / 2, ax = kw / 2;
    std::fill(out.data.begin(), out.data.end(), 0.0);
    const int Ho = out.shape[0], Wo = out.shape[1];
    for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
            double* o = &out.data[(static_cast<std::size_t>(yo) * Wo + xo) * Cout];
            for (int p = 0; p < kh; ++p) {
                int yi = yo * stride + p - ay;
                if (pad == Padding::kCircular) yi = wrap(yi, H);
                else if (yi < 0 || yi >= H) continue;
                for (int q = 0; q < kw; ++q) {
                    int xi = xo * stride + q - ax;
                    if (pad == Padding::kCircular) xi = wrap(xi, W);
                    else if (xi < 0 || xi >= W) continue;
                    const double* src = &in.data[(static_cast<std::size_t>(yi) * W + xi) * Cin];
                    const double* k = &kernel.data[(static_cast<std::size_t>(p) * kw + q) * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = src[ci];
                        if (v == 0.0) continue;
                        const double* kc = k + static_cast<std::size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) o[co] += v * kc[co];
                    }
                }
            }
        }
    }
}

// Exact adjoint of conv2d_forward: accumulates kernel^T applied to `gout`
// into `gin` (same index map, reversed).
inline void conv2d_adjoint_input(const Tensor& gout, const Tensor& kernel, Padding pad, int stride,
                                 Tensor& gin) {
    const int H = gin.shape[0], W = gin.shape[1], Cin = gin.shape[2];
    const int kh = kernel.shape[0], kw = kernel.shape[1], Cout = kernel.shape[3];
    const int ay = kh / 2, ax = kw / 2;
    const int Ho = gout.shape[0], Wo = gout.shape[1];
    for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
            const double* g = &gout.data[(static_cast<std::size_t>(yo) * Wo + xo) * Cout];
            for (int p = 0; p < kh; ++p) {
                int yi = yo * stride + p - ay;
                if (pad == Padding::kCircular) yi = wrap(yi, H);
                else if (yi < 0 || yi >= H) continue;
                for (int q = 0; q < kw; ++q) {
                    int xi = xo * stride + q - ax;
                    if (pad == Padding::kCircular) xi = wrap(xi, W);
                    else if (xi < 0 || xi >= W) continue;
                    double* dst = &gin.data[(static_cast<std::size_t>(yi) * W + xi) * Cin];
                    const double* k = &kernel.data[(static_cast<std::size_t>(p) * kw + q) * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double* kc = k + static_cast<std::size_t>(ci) * Cout;
                        double acc = 0.0;
                        for (int co = 0; co < Cout; ++co) acc += g[co] * kc[co];
                        dst[ci] += acc;
                    }
                }
            }
        }
    }
}

inline void conv2d_kernel_grad(const Tensor& gout, const Tensor& in, Padding pad, int stride,
                               Tensor& gkernel) {
    const int H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
    const int kh = gkernel.shape[0], kw = gkernel.shape[1], Cout = gkernel.shape[3];
    const int ay = kh / 2, ax = kw / 2;
    const int Ho = gout.shape[0], Wo = gout.shape[1];
    for (int yo = 0; yo < Ho; ++yo) {
        for (int xo = 0; xo < Wo; ++xo) {
            const double* g = &gout.data[(static_cast<std::size_t>(yo) * Wo + xo) * Cout];
            for (int p = 0; p < kh; ++p) {
                int yi = yo * stride + p - ay;
                if (pad == Padding::kCircular) yi = wrap(yi, H);
                else if (yi < 0 || yi >= H) continue;
                for (int q = 0; q < kw; ++q) {
                    int xi = xo * stride + q - ax;
                    if (pad == Padding::kCircular) xi = wrap(xi, W);
                    else if (xi < 0 || xi >= W) continue;
                    const double* src = &in.data[(static_cast<std::size_t>(yi) * W + xi) * Cin];
                    double* gk = &gkernel.data[(static_cast<std::size_t>(p) * kw + q) * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = src[ci];
                        if (v == 0.0) continue;
                        double* kc = gk + static_cast<std::size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) kc[co] += v * g[co];
                    }
                }
            }
        }
    }
}

/// Orthonormal DCT-II basis for length n: basis[u*n + i] = a_u cos(pi(2i+1)u / 2n).
inline const std::vector<double>& dct_basis(int n) {
    thread_local std::unordered_map<int, std::vector<double>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> b(static_cast<std::size_t>(n) * n);
    const double pi = std::acos(-1.0);
    for (int u = 0; u < n; ++u) {
        double a = std::sqrt((u == 0 ? 1.0 : 2.0) / n);
        for (int i = 0; i < n; ++i)
            b[static_cast<std::size_t>(u) * n + i] = a * std::cos(pi * (2 * i + 1) * u / (2.0 * n));
    }
    return cache.emplace(n, std::move(b)).first->second;
}

// Per-channel separable transform: out_c = Rows * in_c * Cols^T where Rows and
// Cols are n x n orthonormal matrices (forward DCT uses the basis directly,
// the inverse uses its transpose).
inline void dct2_apply(const Tensor& in, Tensor& out, bool inverse) {
    const int H = in.shape[0], W = in.shape[1], C = in.shape[2];
    const auto& bh = dct_basis(H);
    const auto& bw = dct_basis(W);
    std::vector<double> tmp(static_cast<std::size_t>(H) * W);
    std::vector<double> plane(static_cast<std::size_t>(H) * W);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                plane[static_cast<std::size_t>(y) * W + x] = in.at3(y, x, c);
        // rows
        for (int u = 0; u < H; ++u)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                for (int y = 0; y < H; ++y) {
                    double b = inverse ? bh[static_cast<std::size_t>(y) * H + u]
                                       : bh[static_cast<std::size_t>(u) * H + y];
                    s += b * plane[static_cast<std::size_t>(y) * W + x];
                }
                tmp[static_cast<std::size_t>(u) * W + x] = s;
            }
        // cols
        for (int u = 0; u < H; ++u)
            for (int v = 0; v < W; ++v) {
                double s = 0.0;
                for (int x = 0; x < W; ++x) {
                    double b = inverse ? bw[static_cast<std::size_t>(x) * W + v]
                                       : bw[static_cast<std::size_t>(v) * W + x];
                    s += b * tmp[static_cast<std::size_t>(u) * W + x];
                }
                out.at3(u, v, c) = s;
            }
    }
}

}  // namespace detail

/// Recorded forward graph with a single reverse sweep. Ops are executed
/// eagerly at record time; replay() re-executes the recorded list in order
/// (parameter leaves re-read their external tensors), and backward() walks it
/// exactly once in reverse execution order.
class Tape {
public:
    using Id = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----

    /// Constant leaf: no gradient flows out of it.
    Id constant(Tensor value) { return add_leaf(std::move(value), nullptr, false); }

    /// Parameter leaf bound to an external tensor; backward() accumulates into
    /// external.grad, replay() re-reads external.data.
    Id param(Tensor& external) {
        if (!external.grad) throw std::invalid_argument("parameter leaf requires a grad accumulator");
        return add_leaf(external, &external, true);
    }

    /// Input leaf: gradient is tracked on the tape (read with input_grad),
    /// and the value can be overwritten before replay().
    Id input(Tensor value) { return add_leaf(std::move(value), nullptr, true); }

    void set_value(Id id, const Tensor& v) {
        Node& n = nodes_[id];
        if (v.shape != n.value.shape)
            throw std::invalid_argument("set_value shape mismatch: " + shape_str(v.shape) + " vs " +
                                        shape_str(n.value.shape));
        n.value.data = v.data;
    }

    const Tensor& value(Id id) const { return nodes_[id].value; }
    const std::vector<double>& grad_of(Id id) const { return nodes_[id].grad; }

    std::size_t num_ops() const { return ops_.size(); }

    // ---- primitives ----

    Id conv2d(Id x, Id kernel, Padding pad, int stride = 1) {
        Shape os = detail::conv_output_shape(nodes_[x].value.shape, nodes_[kernel].value.shape, pad, stride);
        Id out = alloc(std::move(os), nodes_[x].needs_grad || nodes_[kernel].needs_grad);
        record([this, x, kernel, pad, stride, out] {
            detail::conv2d_forward(nodes_[x].value, nodes_[kernel].value, pad, stride, nodes_[out].value);
        },
               [this, x, kernel, pad, stride, out] {
                   Tensor gout(nodes_[out].value.shape, nodes_[out].grad);
                   if (nodes_[x].needs_grad) {
                       Tensor gin(nodes_[x].value.shape, std::move(nodes_[x].grad));
                       detail::conv2d_adjoint_input(gout, nodes_[kernel].value, pad, stride, gin);
                       nodes_[x].grad = std::move(gin.data);
                   }
                   if (nodes_[kernel].needs_grad) {
                       Tensor gk(nodes_[kernel].value.shape, std::move(nodes_[kernel].grad));
                       detail::conv2d_kernel_grad(gout, nodes_[x].value, pad, stride, gk);
                       nodes_[kernel].grad = std::move(gk.data);
                   }
               });
        return out;
    }

    /// Affine map: out = W * flatten(x) + b, with weight (K, L) and bias (K).
    Id dense(Id x, Id weight, Id bias) {
        const Tensor& wv = nodes_[weight].value;
        const Tensor& xv = nodes_[x].value;
        if (wv.shape.size() != 2)
            throw std::invalid_argument("dense weight must be a matrix, got " + shape_str(wv.shape));
        const int K = wv.shape[0], L = wv.shape[1];
        if (static_cast<std::size_t>(L) != xv.size())
            throw std::invalid_argument("dense weight has " + std::to_string(L) +
                                        " columns, input has " + std::to_string(xv.size()) +
                                        " elements");
        if (nodes_[bias].value.shape != Shape{K})
            throw std::invalid_argument("dense bias must have shape (" + std::to_string(K) + ")");
        Id out = alloc({K}, nodes_[x].needs_grad || nodes_[weight].needs_grad || nodes_[bias].needs_grad);
        record([this, x, weight, bias, out, K, L] {
            const auto& xd = nodes_[x].value.data;
            const auto& wd = nodes_[weight].value.data;
            const auto& bd = nodes_[bias].value.data;
            auto& od = nodes_[out].value.data;
            for (int k = 0; k < K; ++k) {
                double s = bd[k];
                const double* row = &wd[static_cast<std::size_t>(k) * L];
                for (int l = 0; l < L; ++l) s += row[l] * xd[l];
                od[k] = s;
            }
        },
               [this, x, weight, bias, out, K, L] {
                   const auto& g = nodes_[out].grad;
                   const auto& xd = nodes_[x].value.data;
                   const auto& wd = nodes_[weight].value.data;
                   if (nodes_[x].needs_grad) {
                       auto& gx = nodes_[x].grad;
                       for (int k = 0; k < K; ++k) {
                           const double* row = &wd[static_cast<std::size_t>(k) * L];
                           for (int l = 0; l < L; ++l) gx[l] += g[k] * row[l];
                       }
                   }
                   if (nodes_[weight].needs_grad) {
                       auto& gw = nodes_[weight].grad;
                       for (int k = 0; k < K; ++k)
                           for (int l = 0; l < L; ++l)
                               gw[static_cast<std::size_t>(k) * L + l] += g[k] * xd[l];
                   }
                   if (nodes_[bias].needs_grad) {
                       auto& gb = nodes_[bias].grad;
                       for (int k = 0; k < K; ++k) gb[k] += g[k];
                   }
               });
        return out;
    }

    Id relu(Id x) {
        return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    }

    Id sigmoid(Id x) {
        return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                     [](double, double y) { return y * (1.0 - y); });
    }

    Id exp(Id x) {
        return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
    }

    /// Clip to [0,1]; subgradient 1 strictly inside, 0 outside.
    Id clip01(Id x) {
        return unary(x, [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); },
                     [](double v, double) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
    }

    Id scale(Id x, double factor) {
        return unary(x, [factor](double v) { return factor * v; },
                     [factor](double, double) { return factor; });
    }

    Id add(Id a, Id b) {
        return binary(a, b, [](double u, double v) { return u + v; },
                      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
    }

    Id hadamard(Id a, Id b) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        if (av.shape != bv.shape)
            throw std::invalid_argument("hadamard shape mismatch: " + shape_str(av.shape) + " vs " +
                                        shape_str(bv.shape));
        Id out = alloc(av.shape, nodes_[a].needs_grad || nodes_[b].needs_grad);
        record([this, a, b, out] {
            const auto& ad = nodes_[a].value.data;
            const auto& bd = nodes_[b].value.data;
            auto& od = nodes_[out].value.data;
            for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
        },
               [this, a, b, out] {
                   const auto& g = nodes_[out].grad;
                   const auto& ad = nodes_[a].value.data;
                   const auto& bd = nodes_[b].value.data;
                   if (nodes_[a].needs_grad) {
                       auto& ga = nodes_[a].grad;
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
                   }
                   if (nodes_[b].needs_grad) {
                       auto& gb = nodes_[b].grad;
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
                   }
               });
        return out;
    }

    /// Sorts each disjoint channel pair ascending (MaxMin / GroupSort-2).
    Id groupsort2(Id x) {
        const Tensor& xv = nodes_[x].value;
        const int C = xv.shape.back();
        if (C % 2 != 0)
            throw std::invalid_argument("groupsort2 requires an even channel count, got " +
                                        std::to_string(C));
        Id out = alloc(xv.shape, nodes_[x].needs_grad);
        record([this, x, out] {
            const auto& xd = nodes_[x].value.data;
            auto& od = nodes_[out].value.data;
            for (std::size_t i = 0; i < xd.size(); i += 2) {
                double lo = xd[i], hi = xd[i + 1];
                if (lo > hi) std::swap(lo, hi);
                od[i] = lo;
                od[i + 1] = hi;
            }
        },
               [this, x, out] {
                   if (!nodes_[x].needs_grad) return;
                   const auto& xd = nodes_[x].value.data;
                   const auto& g = nodes_[out].grad;
                   auto& gx = nodes_[x].grad;
                   for (std::size_t i = 0; i < xd.size(); i += 2) {
                       bool swapped = xd[i] > xd[i + 1];
                       gx[i] += swapped ? g[i + 1] : g[i];
                       gx[i + 1] += swapped ? g[i] : g[i + 1];
                   }
               });
        return out;
    }

    /// Replicates a per-channel vector (C) across space into (H, W, C).
    Id expand_channels(Id vec, int h, int w) {
        const Tensor& v = nodes_[vec].value;
        if (v.shape.size() != 1)
            throw std::invalid_argument("expand_channels expects a vector, got " + shape_str(v.shape));
        const int C = v.shape[0];
        Id out = alloc({h, w, C}, nodes_[vec].needs_grad);
        record([this, vec, out, h, w, C] {
            const auto& vd = nodes_[vec].value.data;
            auto& od = nodes_[out].value.data;
            for (int i = 0; i < h * w; ++i)
                for (int c = 0; c < C; ++c) od[static_cast<std::size_t>(i) * C + c] = vd[c];
        },
               [this, vec, out, h, w, C] {
                   if (!nodes_[vec].needs_grad) return;
                   const auto& g = nodes_[out].grad;
                   auto& gv = nodes_[vec].grad;
                   for (int i = 0; i < h * w; ++i)
                       for (int c = 0; c < C; ++c) gv[c] += g[static_cast<std::size_t>(i) * C + c];
               });
        return out;
    }

    /// Global average pool over H and W: (H, W, C) -> (C).
    Id gap(Id x) {
        const Tensor& xv = nodes_[x].value;
        if (xv.shape.size() != 3)
            throw std::invalid_argument("gap expects (H,W,C), got " + shape_str(xv.shape));
        const int HW = xv.shape[0] * xv.shape[1], C = xv.shape[2];
        Id out = alloc({C}, nodes_[x].needs_grad);
        record([this, x, out, HW, C] {
            const auto& xd = nodes_[x].value.data;
            auto& od = nodes_[out].value.data;
            std::fill(od.begin(), od.end(), 0.0);
            for (int i = 0; i < HW; ++i)
                for (int c = 0; c < C; ++c) od[c] += xd[static_cast<std::size_t>(i) * C + c];
            for (int c = 0; c < C; ++c) od[c] /= HW;
        },
               [this, x, out, HW, C] {
                   if (!nodes_[x].needs_grad) return;
                   const auto& g = nodes_[out].grad;
                   auto& gx = nodes_[x].grad;
                   for (int i = 0; i < HW; ++i)
                       for (int c = 0; c < C; ++c) gx[static_cast<std::size_t>(i) * C + c] += g[c] / HW;
               });
        return out;
    }

    Id sum(Id x) { return reduce_scalar(x, false); }
    Id mean(Id x) { return reduce_scalar(x, true); }

    /// Numerically stable softmax cross-entropy against a class index.
    Id softmax_cross_entropy(Id logits, int target) {
        const Tensor& lv = nodes_[logits].value;
        if (lv.shape.size() != 1)
            throw std::invalid_argument("cross-entropy expects a logit vector, got " + shape_str(lv.shape));
        const int K = lv.shape[0];
        if (target < 0 || target >= K)
            throw std::invalid_argument("cross-entropy target " + std::to_string(target) +
                                        " out of range for " + std::to_string(K) + " classes");
        Id out = alloc({1}, nodes_[logits].needs_grad);
        record([this, logits, out, target, K] {
            const auto& ld = nodes_[logits].value.data;
            double mx = ld[0];
            for (int k = 1; k < K; ++k) mx = std::max(mx, ld[k]);
            double lse = 0.0;
            for (int k = 0; k < K; ++k) lse += std::exp(ld[k] - mx);
            nodes_[out].value.data[0] = std::log(lse) + mx - ld[target];
        },
               [this, logits, out, target, K] {
                   if (!nodes_[logits].needs_grad) return;
                   const double g = nodes_[out].grad[0];
                   const auto& ld = nodes_[logits].value.data;
                   auto& gl = nodes_[logits].grad;
                   double mx = ld[0];
                   for (int k = 1; k < K; ++k) mx = std::max(mx, ld[k]);
                   double lse = 0.0;
                   for (int k = 0; k < K; ++k) lse += std::exp(ld[k] - mx);
                   for (int k = 0; k < K; ++k) {
                       double p = std::exp(ld[k] - mx) / lse;
                       gl[k] += g * (p - (k == target ? 1.0 : 0.0));
                   }
               });
        return out;
    }

    /// Orthonormal 2-D DCT-II applied per channel.
    Id dct2(Id x) { return dct_like(x, false); }
    /// Inverse (transpose) of dct2.
    Id idct2(Id x) { return dct_like(x, true); }

    /// Softmax over the first axis of an (R, C) matrix, per column. Columns
    /// of the output sum to one.
    Id colwise_softmax(Id m) {
        const Tensor& mv = nodes_[m].value;
        if (mv.shape.size() != 2)
            throw std::invalid_argument("colwise_softmax expects a matrix, got " + shape_str(mv.shape));
        const int R = mv.shape[0], C = mv.shape[1];
        Id out = alloc(mv.shape, nodes_[m].needs_grad);
        record([this, m, out, R, C] {
            const auto& md = nodes_[m].value.data;
            auto& od = nodes_[out].value.data;
            for (int c = 0; c < C; ++c) {
                double mx = md[c];
                for (int r = 1; r < R; ++r) mx = std::max(mx, md[static_cast<std::size_t>(r) * C + c]);
                double denom = 0.0;
                for (int r = 0; r < R; ++r)
                    denom += std::exp(md[static_cast<std::size_t>(r) * C + c] - mx);
                for (int r = 0; r < R; ++r)
                    od[static_cast<std::size_t>(r) * C + c] =
                        std::exp(md[static_cast<std::size_t>(r) * C + c] - mx) / denom;
            }
        },
               [this, m, out, R, C] {
                   if (!nodes_[m].needs_grad) return;
                   const auto& y = nodes_[out].value.data;
                   const auto& g = nodes_[out].grad;
                   auto& gm = nodes_[m].grad;
                   for (int c = 0; c < C; ++c) {
                       double inner = 0.0;
                       for (int r = 0; r < R; ++r)
                           inner += g[static_cast<std::size_t>(r) * C + c] *
                                    y[static_cast<std::size_t>(r) * C + c];
                       for (int r = 0; r < R; ++r) {
                           std::size_t i = static_cast<std::size_t>(r) * C + c;
                           gm[i] += y[i] * (g[i] - inner);
                       }
                   }
               });
        return out;
    }

    /// Extracts row `row` of an (R, C) matrix as a (C) vector.
    Id slice_row(Id m, int row) {
        const Tensor& mv = nodes_[m].value;
        if (mv.shape.size() != 2)
            throw std::invalid_argument("slice_row expects a matrix, got " + shape_str(mv.shape));
        const int R = mv.shape[0], C = mv.shape[1];
        if (row < 0 || row >= R) throw std::invalid_argument("slice_row row out of range");
        Id out = alloc({C}, nodes_[m].needs_grad);
        record([this, m, out, row, C] {
            const auto& md = nodes_[m].value.data;
            auto& od = nodes_[out].value.data;
            for (int c = 0; c < C; ++c) od[c] = md[static_cast<std::size_t>(row) * C + c];
        },
               [this, m, out, row, C] {
                   if (!nodes_[m].needs_grad) return;
                   const auto& g = nodes_[out].grad;
                   auto& gm = nodes_[m].grad;
                   for (int c = 0; c < C; ++c) gm[static_cast<std::size_t>(row) * C + c] += g[c];
               });
        return out;
    }

    // ---- execution ----

    /// Re-executes every recorded op in original order. Parameter leaves
    /// re-read their external tensors; input leaves keep their current value.
    void replay() {
        for (auto& op : ops_) op.forward();
    }

    /// Single reverse sweep from a scalar loss; visits each recorded op
    /// exactly once in reverse execution order. Parameter-leaf gradients are
    /// accumulated into their external tensors.
    void backward(Id loss) {
        if (nodes_[loss].value.size() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                        shape_str(nodes_[loss].value.shape));
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        nodes_[loss].grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        Tensor* external = nullptr;
        bool needs_grad = false;
    };
    struct Op {
        std::function<void()> forward;
        std::function<void()> backward;
    };

    Id add_leaf(Tensor value, Tensor* external, bool needs_grad) {
        Id id = static_cast<Id>(nodes_.size());
        nodes_.push_back(Node{std::move(value), {}, external, needs_grad});
        if (external) {
            ops_.push_back(Op{[this, id] { nodes_[id].value.data = nodes_[id].external->data; },
                              [this, id] {
                                  auto& acc = *nodes_[id].external->grad;
                                  const auto& g = nodes_[id].grad;
                                  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
                              }});
        } else {
            ops_.push_back(Op{[] {}, [] {}});
        }
        return id;
    }

    Id alloc(Shape shape, bool needs_grad) {
        Id id = static_cast<Id>(nodes_.size());
        nodes_.push_back(Node{Tensor(std::move(shape)), {}, nullptr, needs_grad});
        return id;
    }

    void record(std::function<void()> fwd, std::function<void()> bwd) {
        fwd();
        ops_.push_back(Op{std::move(fwd), std::move(bwd)});
    }

    template <typename F, typename D>
    Id unary(Id x, F f, D df) {
        Id out = alloc(nodes_[x].value.shape, nodes_[x].needs_grad);
        record([this, x, out, f] {
            const auto& xd = nodes_[x].value.data;
            auto& od = nodes_[out].value.data;
            for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
        },
               [this, x, out, df] {
                   if (!nodes_[x].needs_grad) return;
                   const auto& xd = nodes_[x].value.data;
                   const auto& od = nodes_[out].value.data;
                   const auto& g = nodes_[out].grad;
                   auto& gx = nodes_[x].grad;
                   for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += g[i] * df(xd[i], od[i]);
               });
        return out;
    }

    template <typename F, typename D>
    Id binary(Id a, Id b, F f, D df) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        if (av.shape != bv.shape)
            throw std::invalid_argument("elementwise shape mismatch: " + shape_str(av.shape) +
                                        " vs " + shape_str(bv.shape));
        Id out = alloc(av.shape, nodes_[a].needs_grad || nodes_[b].needs_grad);
        record([this, a, b, out, f] {
            const auto& ad = nodes_[a].value.data;
            const auto& bd = nodes_[b].value.data;
            auto& od = nodes_[out].value.data;
            for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(ad[i], bd[i]);
        },
               [this, a, b, out, df] {
                   const auto& ad = nodes_[a].value.data;
                   const auto& bd = nodes_[b].value.data;
                   const auto& g = nodes_[out].grad;
                   for (std::size_t i = 0; i < g.size(); ++i) {
                       auto [da, db] = df(ad[i], bd[i]);
                       if (nodes_[a].needs_grad) nodes_[a].grad[i] += g[i] * da;
                       if (nodes_[b].needs_grad) nodes_[b].grad[i] += g[i] * db;
                   }
               });
        return out;
    }

    Id reduce_scalar(Id x, bool mean) {
        const double denom = mean ? static_cast<double>(nodes_[x].value.size()) : 1.0;
        Id out = alloc({1}, nodes_[x].needs_grad);
        record([this, x, out, denom] {
            const auto& xd = nodes_[x].value.data;
            double s = 0.0;
            for (double v : xd) s += v;
            nodes_[out].value.data[0] = s / denom;
        },
               [this, x, out, denom] {
                   if (!nodes_[x].needs_grad) return;
                   const double g = nodes_[out].grad[0] / denom;
                   for (auto& v : nodes_[x].grad) v += g;
               });
        return out;
    }

    Id dct_like(Id x, bool inverse) {
        const Tensor& xv = nodes_[x].value;
        if (xv.shape.size() != 3)
            throw std::invalid_argument("dct2 expects (H,W,C), got " + shape_str(xv.shape));
        Id out = alloc(xv.shape, nodes_[x].needs_grad);
        record([this, x, out, inverse] { detail::dct2_apply(nodes_[x].value, nodes_[out].value, inverse); },
               [this, x, out, inverse] {
                   if (!nodes_[x].needs_grad) return;
                   Tensor g(nodes_[out].value.shape, nodes_[out].grad);
                   Tensor gx(nodes_[x].value.shape);
                   detail::dct2_apply(g, gx, !inverse);  // orthonormal: adjoint = inverse
                   auto& acc = nodes_[x].grad;
                   for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gx.data[i];
               });
        return out;
    }

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
};

}  // namespace hycas
