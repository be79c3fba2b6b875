#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>

#include "hycas/autodiff.hpp"
#include "hycas/rng.hpp"
#include "hycas/tensor.hpp"

namespace hycas {

/// 4-D convolution kernel plus its padding/stride convention and the most
/// recent spectral-norm estimate. `fourier_audited` records whether that
/// estimate came from the exact Fourier bound (the authoritative estimator)
/// rather than the power-iteration surrogate.
struct KernelSpec {
    Tensor kernel;  // (kh, kw, Cin, Cout)
    Padding padding = Padding::kCircular;
    int stride = 1;
    std::optional<double> sigma_hat;
    bool fourier_audited = false;

    static constexpr double kEpsilonGuard = 1e-6;

    KernelSpec() = default;
    explicit KernelSpec(Tensor k, Padding pad = Padding::kCircular, int s = 1)
        : kernel(std::move(k)), padding(pad), stride(s) {
        if (kernel.shape.size() != 4)
            throw std::invalid_argument("kernel must be (kh,kw,Cin,Cout), got " +
                                        shape_str(kernel.shape));
    }

    int in_channels() const { return kernel.shape[2]; }
    int out_channels() const { return kernel.shape[3]; }
};

inline Tensor conv_apply(const KernelSpec& k, const Tensor& x) {
    Tensor out(detail::conv_output_shape(x.shape, k.kernel.shape, k.padding, k.stride));
    detail::conv2d_forward(x, k.kernel, k.padding, k.stride, out);
    return out;
}

inline Tensor conv_adjoint_apply(const KernelSpec& k, const Tensor& y, const Shape& in_shape) {
    Tensor out(in_shape);
    detail::conv2d_adjoint_input(y, k.kernel, k.padding, k.stride, out);
    return out;
}

/// Exact operator norm of the induced circular convolution on an H x W grid:
/// the maximum over 2-D frequencies of the largest singular value of the
/// Cin x Cout transfer matrix. Only valid for circular padding, stride 1.
inline double spectral_norm_fourier(const KernelSpec& k, int h, int w) {
    if (k.padding != Padding::kCircular)
        throw std::invalid_argument("the Fourier bound is only valid for circular padding");
    if (k.stride != 1)
        throw std::invalid_argument("the Fourier bound is only implemented for stride 1");
    const int kh = k.kernel.shape[0], kw = k.kernel.shape[1];
    const int cin = k.kernel.shape[2], cout = k.kernel.shape[3];
    if (h < kh || w < kw)
        throw std::invalid_argument("grid must be at least as large as the kernel");

    const double pi = std::acos(-1.0);
    Eigen::MatrixXcd transfer(cin, cout);
    double best = 0.0;
    for (int a = 0; a < h; ++a) {
        for (int b = 0; b < w; ++b) {
            transfer.setZero();
            for (int p = 0; p < kh; ++p) {
                for (int q = 0; q < kw; ++q) {
                    double phase = -2.0 * pi * (static_cast<double>(a) * p / h +
                                                static_cast<double>(b) * q / w);
                    std::complex<double> e(std::cos(phase), std::sin(phase));
                    for (int ci = 0; ci < cin; ++ci)
                        for (int co = 0; co < cout; ++co)
                            transfer(ci, co) += e * k.kernel.at4(p, q, ci, co);
                }
            }
            double sigma = transfer.jacobiSvd().singularValues()(0);
            best = std::max(best, sigma);
        }
    }
    return best;
}

inline constexpr int kPowerIterDefaultSteps = 5;
inline constexpr int kPowerIterChains = 4;

namespace detail {

inline double power_iter_chain(const KernelSpec& k, const Shape& in_shape, int steps,
                               std::uint64_t seed) {
    Tensor u(conv_output_shape(in_shape, k.kernel.shape, k.padding, k.stride));
    Rng rng(seed);
    for (auto& v : u.data) v = rng.normal();

    Tensor v(in_shape);
    for (int t = 0; t < steps; ++t) {
        v = conv_adjoint_apply(k, u, in_shape);
        double nv = l2_norm(v);
        if (nv == 0.0) return 0.0;
        for (auto& e : v.data) e /= nv;
        u = conv_apply(k, v);
        double nu = l2_norm(u);
        if (nu == 0.0) return 0.0;
        for (auto& e : u.data) e /= nu;
    }
    return dot(u.data, conv_apply(k, v).data);
}

}  // namespace detail

/// T-step power-iteration estimate of the convolution operator norm:
/// alternating normalized applications of the adjoint and the convolution,
/// finishing with the Rayleigh quotient <u, K v>. Runs a handful of
/// independently seeded chains and keeps the best quotient — every chain is a
/// lower bound, and a single random start converges too slowly on the
/// clustered spectra circular convolutions produce. The result never exceeds
/// the Fourier value and is monotone non-decreasing in T.
inline double spectral_norm_power_iter(const KernelSpec& k, int h, int w,
                                       int steps = kPowerIterDefaultSteps,
                                       std::uint64_t seed = 0x9d5ce5e1u) {
    if (steps < 1) throw std::invalid_argument("power iteration requires at least one step");
    const Shape in_shape{h, w, k.in_channels()};
    double best = 0.0;
    for (int chain = 0; chain < kPowerIterChains; ++chain)
        best = std::max(best, detail::power_iter_chain(k, in_shape, steps,
                                                       derive_seed(seed, 0xf0u + chain)));
    return best;
}

/// Renormalisation rule shared by both estimators:
/// K <- K / (max(sigma_hat, 1) + 1e-6). Keeps the operator norm at or below 1
/// whenever sigma_hat does not underestimate.
inline KernelSpec rescale_kernel(KernelSpec k) {
    if (!k.sigma_hat) throw std::invalid_argument("rescale_kernel requires a populated sigma_hat");
    const double divisor = std::max(*k.sigma_hat, 1.0) + KernelSpec::kEpsilonGuard;
    for (auto& v : k.kernel.data) v /= divisor;
    *k.sigma_hat /= divisor;
    return k;
}

/// Computes the exact Fourier norm, stores it on the spec and marks the
/// kernel as audited. Returns the norm.
inline double audit_kernel(KernelSpec& k, int h, int w) {
    double sigma = spectral_norm_fourier(k, h, w);
    k.sigma_hat = sigma;
    k.fourier_audited = true;
    return sigma;
}

struct BatchSpectralResult {
    double rayleigh_quotient = 0.0;
    KernelSpec normalized;
};

/// Batch-aware spectral normalisation of a random-projection filter: draws a
/// Gaussian batch u of shape (N, H/S, W/S, Cout), runs two alternating
/// adjoint/forward power-iteration updates normalising each sample
/// independently, averages the per-sample Rayleigh quotients and rescales by
/// max(RQ, 1).
inline BatchSpectralResult batch_aware_spectral_norm(const KernelSpec& w0, int n, int h, int w,
                                                     std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("batch size must be >= 1");
    const Shape in_shape{h, w, w0.in_channels()};
    const Shape out_shape = detail::conv_output_shape(in_shape, w0.kernel.shape, w0.padding, w0.stride);

    Rng rng(derive_seed(seed, 0xbau));
    double rq = 0.0;
    Tensor u(out_shape), v(in_shape), tmp(out_shape);
    for (int i = 0; i < n; ++i) {
        for (auto& e : u.data) e = rng.normal();
        bool degenerate = false;
        for (int step = 0; step < 2; ++step) {
            std::fill(v.data.begin(), v.data.end(), 0.0);
            detail::conv2d_adjoint_input(u, w0.kernel, w0.padding, w0.stride, v);
            double nv = l2_norm(v);
            if (nv == 0.0) { degenerate = true; break; }
            for (auto& e : v.data) e /= nv;
            detail::conv2d_forward(v, w0.kernel, w0.padding, w0.stride, u);
            double nu = l2_norm(u);
            if (nu == 0.0) { degenerate = true; break; }
            for (auto& e : u.data) e /= nu;
        }
        if (!degenerate) {
            detail::conv2d_forward(v, w0.kernel, w0.padding, w0.stride, tmp);
            rq += dot(u.data, tmp.data);
        }
    }
    rq /= n;

    BatchSpectralResult result;
    result.rayleigh_quotient = rq;
    result.normalized = w0;
    const double divisor = std::max(rq, 1.0);
    for (auto& v : result.normalized.kernel.data) v /= divisor;
    result.normalized.sigma_hat = std::nullopt;
    result.normalized.fourier_audited = false;
    return result;
}

/// Frozen orthogonal C x C channel mixer built from a seeded Gaussian matrix
/// via Householder QR (sign-fixed so the factorisation is unique).
struct OrthoMixer {
    Tensor u;  // (C, C), row-major; y = U x
    std::uint64_t seed = 0;

    int channels() const { return u.shape[0]; }

    /// As a (1,1,C,C) convolution kernel.
    Tensor as_conv_kernel() const {
        const int c = channels();
        Tensor k({1, 1, c, c});
        for (int row = 0; row < c; ++row)
            for (int col = 0; col < c; ++col) k.at4(0, 0, col, row) = u.data[static_cast<std::size_t>(row) * c + col];
        return k;
    }

    /// Transpose kernel (the exact inverse).
    Tensor as_conv_kernel_transposed() const {
        const int c = channels();
        Tensor k({1, 1, c, c});
        for (int row = 0; row < c; ++row)
            for (int col = 0; col < c; ++col) k.at4(0, 0, row, col) = u.data[static_cast<std::size_t>(row) * c + col];
        return k;
    }
};

inline OrthoMixer make_orthogonal_mixer(int c, std::uint64_t seed) {
    if (c < 1) throw std::invalid_argument("mixer needs at least one channel");
    Rng rng(derive_seed(seed, 0x0au));
    Eigen::MatrixXd g(c, c);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;

    OrthoMixer mixer;
    mixer.seed = seed;
    mixer.u = Tensor({c, c});
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) mixer.u.data[static_cast<std::size_t>(i) * c + j] = q(i, j);
    return mixer;
}

inline Tensor mixer_apply(const OrthoMixer& m, const Tensor& x) {
    const int c = m.channels();
    if (x.shape.back() != c) throw std::invalid_argument("mixer channel mismatch");
    Tensor out(x.shape);
    const std::size_t positions = x.size() / c;
    for (std::size_t i = 0; i < positions; ++i) {
        const double* src = &x.data[i * c];
        double* dst = &out.data[i * c];
        for (int row = 0; row < c; ++row) {
            double s = 0.0;
            for (int col = 0; col < c; ++col) s += m.u.data[static_cast<std::size_t>(row) * c + col] * src[col];
            dst[row] = s;
        }
    }
    return out;
}

// ---- orthonormal 2-D DCT on planes ----

inline Tensor dct2_plane(const Tensor& x) {
    if (x.shape.size() != 2) throw std::invalid_argument("dct2 expects an (H,W) plane");
    Tensor in({x.shape[0], x.shape[1], 1}, x.data);
    Tensor out({x.shape[0], x.shape[1], 1});
    detail::dct2_apply(in, out, false);
    return Tensor({x.shape[0], x.shape[1]}, std::move(out.data));
}

inline Tensor idct2_plane(const Tensor& coeffs) {
    if (coeffs.shape.size() != 2) throw std::invalid_argument("idct2 expects an (H,W) plane");
    Tensor in({coeffs.shape[0], coeffs.shape[1], 1}, coeffs.data);
    Tensor out({coeffs.shape[0], coeffs.shape[1], 1});
    detail::dct2_apply(in, out, true);
    return Tensor({coeffs.shape[0], coeffs.shape[1]}, std::move(out.data));
}

/// Binary low-pass mask over DCT coefficients: keeps the lowest
/// ceil(rho*H) x ceil(rho*W) frequency block and zeroes the rest.
struct DctMask {
    Tensor mask;  // (H, W), entries in {0, 1}
    double cutoff_rho = 1.0;
};

inline DctMask lowpass_mask(int h, int w, double cutoff_rho) {
    if (cutoff_rho < 0.0 || cutoff_rho > 1.0)
        throw std::invalid_argument("cutoff_rho must lie in [0, 1]");
    DctMask m;
    m.cutoff_rho = cutoff_rho;
    m.mask = Tensor({h, w});
    const int keep_h = static_cast<int>(std::ceil(cutoff_rho * h));
    const int keep_w = static_cast<int>(std::ceil(cutoff_rho * w));
    for (int u = 0; u < keep_h; ++u)
        for (int v = 0; v < keep_w; ++v) m.mask.data[static_cast<std::size_t>(u) * w + v] = 1.0;
    return m;
}

}  // namespace hycas
