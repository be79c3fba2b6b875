#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written directly from definitions (explicit index arithmetic, quadrature,
// log-space tail sums) and must stay decoupled from the library's own
// computational paths.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "hycas/tensor.hpp"

namespace oracle {

// Materializes the doubly-block-circulant matrix of a circular convolution
// (anchor at kh/2, kw/2) as a (H*W*Cout) x (H*W*Cin) dense matrix.
inline Eigen::MatrixXd circular_conv_matrix(const hycas::Tensor& kernel, int h, int w) {
    const int kh = kernel.shape[0], kw = kernel.shape[1];
    const int cin = kernel.shape[2], cout = kernel.shape[3];
    const int ay = kh / 2, ax = kw / 2;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(h * w * cout, h * w * cin);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int co = 0; co < cout; ++co) {
                const int row = (y * w + x) * cout + co;
                for (int p = 0; p < kh; ++p)
                    for (int q = 0; q < kw; ++q) {
                        const int yi = ((y + p - ay) % h + h) % h;
                        const int xi = ((x + q - ax) % w + w) % w;
                        for (int ci = 0; ci < cin; ++ci) {
                            const int col = (yi * w + xi) * cin + ci;
                            m(row, col) += kernel.at4(p, q, ci, co);
                        }
                    }
            }
    return m;
}

// Central finite-difference slope of eval() with respect to *slot.
inline double fd_slope(const std::function<double()>& eval, double* slot, double h = 1e-5) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = eval();
    *slot = saved - h;
    const double down = eval();
    *slot = saved;
    return (up - down) / (2.0 * h);
}

// Gradient check passes when the analytic and finite-difference slopes agree
// to 1e-4 relative error (or 1e-8 absolute for near-zero slopes).
inline bool grad_matches(double analytic, double fd) {
    const double diff = std::fabs(analytic - fd);
    if (diff <= 1e-8) return true;
    return diff / std::max(std::fabs(analytic), std::fabs(fd)) <= 1e-4;
}

// Standard normal CDF by adaptive Simpson quadrature of the density; no
// dependency on erf/erfc.
namespace detail {
inline double gauss_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::acos(-1.0)); }

inline double simpson(double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive(double a, double b, double fa, double fm, double fb, double whole, double eps,
                       int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = gauss_pdf(lm), frm = gauss_pdf(rm);
    const double left = simpson(a, m, fa, flm, fm);
    const double right = simpson(m, b, fm, frm, fb);
    if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * eps)
        return left + right + (left + right - whole) / 15.0;
    return adaptive(a, m, fa, flm, fm, left, eps / 2.0, depth - 1) +
           adaptive(m, b, fm, frm, fb, right, eps / 2.0, depth - 1);
}
}  // namespace detail

inline double gauss_cdf_quadrature(double x) {
    if (x < 0.0) return 1.0 - gauss_cdf_quadrature(-x);
    const double fa = detail::gauss_pdf(0.0), fb = detail::gauss_pdf(x);
    const double fm = detail::gauss_pdf(0.5 * x);
    const double whole = detail::simpson(0.0, x, fa, fm, fb);
    return 0.5 + detail::adaptive(0.0, x, fa, fm, fb, whole, 1e-13, 40);
}

// P[Bin(n, p) >= m] summed in log space.
inline double binomial_upper_tail(int m, int n, double p) {
    if (m <= 0) return 1.0;
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    double total = 0.0;
    // log C(n,k) built incrementally from k = m upward.
    double log_choose = 0.0;
    for (int i = 0; i < m; ++i) log_choose += std::log(static_cast<double>(n - i) / (i + 1));
    const double lp = std::log(p), lq = std::log1p(-p);
    for (int k = m; k <= n; ++k) {
        total += std::exp(log_choose + k * lp + (n - k) * lq);
        if (k < n) log_choose += std::log(static_cast<double>(n - k) / (k + 1));
    }
    return std::min(total, 1.0);
}

// Largest p with P[Bin(n,p) >= m] <= alpha, solved by bisection directly on
// the binomial tail.
inline double clopper_pearson_lower_oracle(int m, int n, double alpha) {
    if (m == 0) return 0.0;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (binomial_upper_tail(m, n, mid) <= alpha ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace oracle
