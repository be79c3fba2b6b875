#pragma once

#include <functional>

#include "hycas/network.hpp"
#include "hycas/stats.hpp"

namespace hycas {

enum class CertMethod { kRs, kLipMargin };

inline const char* cert_method_name(CertMethod m) {
    return m == CertMethod::kRs ? "RS" : "LipMargin";
}

/// A robustness certificate: prediction, certified l2 radius and its
/// conservative l_inf conversion r2/sqrt(d), the issuing branch, and the
/// abstain flag. Abstention forces both radii to zero.
struct Certificate {
    int label = -1;
    double radius_l2 = 0.0;
    double radius_linf = 0.0;
    CertMethod method = CertMethod::kRs;
    bool abstain = true;
    double confidence = 0.0;
};

inline Certificate make_certificate(int label, double radius_l2, int input_dim, CertMethod method,
                                    double confidence) {
    Certificate c;
    c.label = label;
    c.method = method;
    c.confidence = confidence;
    c.abstain = !(radius_l2 > 0.0);
    c.radius_l2 = c.abstain ? 0.0 : radius_l2;
    c.radius_linf = c.radius_l2 / std::sqrt(static_cast<double>(input_dim));
    return c;
}

/// Monte-Carlo certification budget: n0 pilot draws to pick the candidate
/// class, n main draws to bound its probability, significance alpha, and the
/// smoothing noise level sigma.
struct McConfig {
    int n0 = 100;
    int n = 100000;
    double alpha = 0.001;
    double sigma = 0.25;

    void validate() const {
        if (n0 < 1 || n < n0) throw std::invalid_argument("McConfig requires n >= n0 >= 1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("McConfig alpha in (0,1)");
        if (sigma < 0.0) throw std::invalid_argument("McConfig sigma must be >= 0");
    }
};

/// Certified radius of the smoothed classifier given a lower bound on the
/// top-class probability.
inline double rs_radius(double sigma, double p_lower) {
    return p_lower > 0.5 ? sigma * inv_gauss_cdf(p_lower) : 0.0;
}

/// Per-draw logits of the model's internal randomness only (no input noise):
/// row i is s(x; Omega_i) with Omega_i from the counter stream (seed, i).
inline std::vector<std::vector<double>> sample_logits(const HycasNetwork& net, const Tensor& x,
                                                      int samples, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("expected_logits requires samples >= 1");
    NetworkEvaluator ev = NetworkEvaluator::inference(net);
    ev.set_input(x);
    std::vector<std::vector<double>> rows;
    rows.reserve(samples);
    for (int i = 0; i < samples; ++i) {
        ev.set_noise(noise_state_for(seed, i));
        ev.run();
        rows.push_back(ev.logits());
    }
    return rows;
}

/// Expected logits Z(x), averaged over the model's internal randomness.
inline std::vector<double> expected_logits(const HycasNetwork& net, const Tensor& x, int samples,
                                           std::uint64_t seed) {
    auto rows = sample_logits(net, x, samples, seed);
    std::vector<double> z(rows[0].size(), 0.0);
    for (const auto& row : rows)
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += row[k];
    for (auto& v : z) v /= samples;
    return z;
}

namespace detail {

inline std::pair<int, int> top_two(const std::vector<double>& z) {
    int top = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
        if (z[k] > z[top]) top = static_cast<int>(k);
    int second = top == 0 ? 1 : 0;
    for (std::size_t k = 0; k < z.size(); ++k)
        if (static_cast<int>(k) != top && z[k] > z[second]) second = static_cast<int>(k);
    return {top, second};
}

}  // namespace detail

/// Margin certificate on expected logits: r2 = (Z(1) - Z(2)) / 4 for a
/// <= 2-Lipschitz logit map, abstaining on a non-positive gap.
inline Certificate margin_certificate(const std::vector<double>& z, int input_dim,
                                      double confidence = 1.0) {
    if (z.size() < 2) throw std::invalid_argument("margin certificate needs >= 2 classes");
    auto [top, second] = detail::top_two(z);
    const double gap = z[top] - z[second];
    return make_certificate(top, gap / 4.0, input_dim, CertMethod::kLipMargin, confidence);
}

enum class LcbMode { kStudentT, kHoeffding };

/// Margin certificate from Monte-Carlo logit samples with one-sided
/// confidence bounds: r = max(0, (LCB(top mean) - max UCB(rivalمean)) / 4).
/// Student-t bounds by default; the distribution-free mode clamps logits to
/// [range_lo, range_hi] and uses Hoeffding half-widths. The alpha budget is
/// split between the top-class bound and the rivals.
inline Certificate margin_certificate_lcb(const std::vector<std::vector<double>>& logit_samples,
                                          double alpha, int input_dim,
                                          LcbMode mode = LcbMode::kStudentT, double range_lo = -1.0,
                                          double range_hi = 1.0) {
    const int n = static_cast<int>(logit_samples.size());
    if (n < 2) throw std::invalid_argument("margin_certificate_lcb needs >= 2 samples");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    const int k = static_cast<int>(logit_samples[0].size());
    if (k < 2) throw std::invalid_argument("margin certificate needs >= 2 classes");

    std::vector<double> mean(k, 0.0), sd(k, 0.0);
    for (const auto& row : logit_samples)
        for (int c = 0; c < k; ++c) {
            double v = row[c];
            if (mode == LcbMode::kHoeffding) v = std::min(range_hi, std::max(range_lo, v));
            mean[c] += v;
        }
    for (auto& v : mean) v /= n;
    for (const auto& row : logit_samples)
        for (int c = 0; c < k; ++c) {
            double v = row[c];
            if (mode == LcbMode::kHoeffding) v = std::min(range_hi, std::max(range_lo, v));
            sd[c] += (v - mean[c]) * (v - mean[c]);
        }
    for (auto& v : sd) v = std::sqrt(v / (n - 1));

    auto [top, second] = detail::top_two(mean);
    (void)second;
    const double alpha_top = alpha / 2.0;
    const double alpha_rival = alpha / (2.0 * (k - 1));

    auto half_width = [&](double alpha_i, double sdev) {
        if (mode == LcbMode::kHoeffding)
            return (range_hi - range_lo) * std::sqrt(std::log(1.0 / alpha_i) / (2.0 * n));
        return student_t_quantile(1.0 - alpha_i, n - 1) * sdev / std::sqrt(static_cast<double>(n));
    };

    const double lcb = mean[top] - half_width(alpha_top, sd[top]);
    double worst_ucb = -1e300;
    for (int c = 0; c < k; ++c) {
        if (c == top) continue;
        worst_ucb = std::max(worst_ucb, mean[c] + half_width(alpha_rival, sd[c]));
    }
    return make_certificate(top, (lcb - worst_ucb) / 4.0, input_dim, CertMethod::kLipMargin,
                            1.0 - alpha);
}

/// Base-classifier draw: label of one forward at (x + epsilon; Omega).
using SmoothedPredictor = std::function<int(const Tensor& x, const NoiseState& noise)>;

/// Cohen-style randomized-smoothing certification of an arbitrary predictor:
/// n0 pilot draws pick the candidate class, n fresh draws give an exact
/// Clopper-Pearson lower bound on its probability, and the radius is
/// sigma * PhiInv(p_lb) unless p_lb <= 1/2, in which case the certificate
/// abstains. Every draw uses a fresh (epsilon, Omega) from the counter
/// stream, so certification is reproducible and order-independent.
inline Certificate rs_certify_fn(const SmoothedPredictor& predict, const Tensor& x,
                                 int num_classes, const McConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int d = static_cast<int>(x.size());

    auto draw = [&](std::uint64_t stream, std::uint64_t index) {
        NoiseState ns = noise_state_for(derive_seed(seed, stream), index);
        Tensor eps(x.shape);
        Rng rng(derive_seed(derive_seed(seed, stream + 1), index));
        for (auto& v : eps.data) v = cfg.sigma * rng.normal();
        ns.epsilon = std::move(eps);
        return predict(x, ns);
    };

    std::vector<long> counts(num_classes, 0);
    for (int i = 0; i < cfg.n0; ++i) ++counts[draw(0xA0, i)];
    int candidate = 0;
    for (int c = 1; c < num_classes; ++c)
        if (counts[c] > counts[candidate]) candidate = c;

    long hits = 0;
    for (int i = 0; i < cfg.n; ++i)
        if (draw(0xB0, i) == candidate) ++hits;

    const double p_lb = clopper_pearson_lower(hits, cfg.n, 1.0 - cfg.alpha);
    if (p_lb <= 0.5) {
        Certificate c = make_certificate(candidate, 0.0, d, CertMethod::kRs, 1.0 - cfg.alpha);
        return c;
    }
    return make_certificate(candidate, rs_radius(cfg.sigma, p_lb), d, CertMethod::kRs,
                            1.0 - cfg.alpha);
}

inline Certificate rs_certify(const HycasNetwork& net, const Tensor& x, const McConfig& cfg,
                              std::uint64_t seed) {
    NetworkEvaluator ev = NetworkEvaluator::inference(net);
    ev.set_input(x);
    SmoothedPredictor predict = [&](const Tensor&, const NoiseState& ns) {
        ev.set_noise(ns);
        ev.run();
        return argmax(ev.logits());
    };
    return rs_certify_fn(predict, x, net.classes(), cfg, seed);
}

/// Deterministic Lipschitz-margin certificate at frozen internal randomness:
/// R = (s(1) - s(2)) / 4 on the logits s(x; Omega*), valid because the
/// calibrated network is at most 2-Lipschitz for every fixed Omega.
inline Certificate lip_certify(const HycasNetwork& net, const Tensor& x,
                               const NoiseState& frozen_noise, double confidence = 1.0) {
    if (!net.calibrated || net.lip_bound > 2.0 + 1e-9)
        throw std::invalid_argument("lip_certify requires a calibrated network (lip_bound <= 2)");
    std::vector<double> s = network_logits(net, x, frozen_noise);
    auto [top, second] = detail::top_two(s);
    const double gap = s[top] - s[second];
    return make_certificate(top, gap / 4.0, static_cast<int>(x.size()), CertMethod::kLipMargin,
                            confidence);
}

/// Part-C selection: the certificate with the larger radius wins, ties going
/// to the first (RS) branch; abstains only when both branches abstain.
inline Certificate pick_stronger(const Certificate& rs, const Certificate& lip) {
    if (rs.abstain && lip.abstain) return rs;
    return rs.radius_l2 >= lip.radius_l2 ? rs : lip;
}

/// Runs both certification branches with the significance split
/// alpha_RS = alpha_Lip = alpha/2 and picks the stronger certificate.
inline Certificate certify(const HycasNetwork& net, const Tensor& x, const McConfig& cfg,
                           std::uint64_t seed) {
    McConfig rs_cfg = cfg;
    rs_cfg.alpha = cfg.alpha / 2.0;
    Certificate rs = rs_certify(net, x, rs_cfg, derive_seed(seed, 0x125));
    Certificate lip =
        lip_certify(net, x, noise_state_for(derive_seed(seed, 0x11F), 0), 1.0 - cfg.alpha / 2.0);
    return pick_stronger(rs, lip);
}

}  // namespace hycas
