#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace hycas {

/// Standard normal CDF.
inline double gauss_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double gauss_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::acos(-1.0));
}

/// Inverse standard normal CDF: Acklam's rational approximation refined by
/// one Newton step against the erfc-based CDF. |Phi(result) - p| < 1e-9 over
/// the open unit interval; antisymmetric about 1/2 by construction.
inline double inv_gauss_cdf(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("inv_gauss_cdf requires p in (0,1), got " + std::to_string(p));

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;

    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    double pdf = gauss_pdf(x);
    if (pdf > 0.0) x -= (gauss_cdf(x) - p) / pdf;
    return x;
}

namespace detail {

/// Continued fraction for the regularized incomplete beta (Lentz).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 400;
    constexpr double kEps = 3e-16, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) <= kEps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                  a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
    return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// Exact one-sided lower binomial confidence bound: the largest p with
/// P[Bin(n, p) >= m] <= alpha, where alpha = 1 - conf. Uses the Beta-tail
/// identity P[Bin(n,p) >= m] = I_p(m, n-m+1), solved by bisection to 1e-13.
inline double clopper_pearson_lower(long m, long n, double conf) {
    if (n < 1 || m < 0 || m > n) throw std::invalid_argument("clopper_pearson_lower: bad m/n");
    if (!(conf > 0.0 && conf < 1.0))
        throw std::invalid_argument("clopper_pearson_lower: confidence must be in (0,1)");
    if (m == 0) return 0.0;
    const double alpha = 1.0 - conf;
    const double a = static_cast<double>(m), b = static_cast<double>(n - m + 1);
    double lo = 0.0, hi = 1.0;
    while (hi - lo > 1e-13) {
        double mid = 0.5 * (lo + hi);
        (reg_incomplete_beta(a, b, mid) <= alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Student-t CDF with `dof` degrees of freedom.
inline double student_t_cdf(double t, double dof) {
    if (dof <= 0.0) throw std::invalid_argument("student_t_cdf: dof must be positive");
    const double x = dof / (dof + t * t);
    const double half_tail = 0.5 * reg_incomplete_beta(0.5 * dof, 0.5, x);
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

/// Student-t quantile by bisection on the CDF.
inline double student_t_quantile(double p, double dof) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("student_t_quantile: p in (0,1) required");
    double hi = 1.0;
    while (student_t_cdf(hi, dof) < p && hi < 1e12) hi *= 2.0;
    double lo = -1.0;
    while (student_t_cdf(lo, dof) > p && lo > -1e12) lo *= 2.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace hycas
