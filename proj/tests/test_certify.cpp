#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hycas/certify.hpp"
#include "oracle_helpers.hpp"

using namespace hycas;

TEST_CASE("inverse Gaussian CDF") {
    SECTION("median maps to zero") { CHECK(inv_gauss_cdf(0.5) == 0.0); }
    SECTION("antisymmetry") {
        for (double p : {0.01, 0.1, 0.25, 0.3, 0.45, 0.6, 0.9, 0.999})
            CHECK(std::fabs(inv_gauss_cdf(p) + inv_gauss_cdf(1.0 - p)) < 1e-12);
    }
    SECTION("p = 0.975 matches the quadrature oracle") {
        double x = inv_gauss_cdf(0.975);
        CHECK(x == Catch::Approx(1.95996).margin(1e-5));
        CHECK(std::fabs(oracle::gauss_cdf_quadrature(x) - 0.975) < 1e-9);
    }
    SECTION("round-trip error below 1e-9 across the unit interval") {
        for (double p : {1e-6, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.97575, 0.99,
                         0.9999, 1.0 - 1e-6})
            CHECK(std::fabs(oracle::gauss_cdf_quadrature(inv_gauss_cdf(p)) - p) < 1e-9);
    }
    SECTION("out-of-domain arguments are rejected") {
        CHECK_THROWS_AS(inv_gauss_cdf(0.0), std::invalid_argument);
        CHECK_THROWS_AS(inv_gauss_cdf(1.0), std::invalid_argument);
        CHECK_THROWS_AS(inv_gauss_cdf(-0.5), std::invalid_argument);
    }
}

TEST_CASE("Clopper-Pearson lower bound") {
    SECTION("no successes give a zero bound") {
        CHECK(clopper_pearson_lower(0, 100, 0.999) == 0.0);
    }
    SECTION("all successes match the closed form alpha^(1/n)") {
        for (auto [n, alpha] : {std::pair{10, 0.05}, {100, 0.001}, {2000, 0.01}}) {
            double expect = std::pow(alpha, 1.0 / n);
            CHECK(std::fabs(clopper_pearson_lower(n, n, 1.0 - alpha) - expect) < 1e-12);
        }
    }
    SECTION("m=99, n=100 matches the binomial-tail bisection oracle") {
        double got = clopper_pearson_lower(99, 100, 0.999);
        double expect = oracle::clopper_pearson_lower_oracle(99, 100, 0.001);
        CHECK(std::fabs(got - expect) < 1e-9);
    }
    SECTION("random triples match the oracle to 1e-9") {
        Rng rng(71);
        for (int trial = 0; trial < 40; ++trial) {
            int n = 1 + static_cast<int>(rng.uniform_below(3000));
            int m = static_cast<int>(rng.uniform_below(n + 1));
            double alpha = 0.0005 + 0.2 * rng.uniform();
            double got = clopper_pearson_lower(m, n, 1.0 - alpha);
            double expect = oracle::clopper_pearson_lower_oracle(m, n, alpha);
            CHECK(std::fabs(got - expect) < 1e-9);
        }
    }
    SECTION("monotone non-decreasing in m, non-increasing in confidence") {
        double prev = -1.0;
        for (int m = 0; m <= 50; m += 5) {
            double v = clopper_pearson_lower(m, 50, 0.99);
            CHECK(v >= prev - 1e-10);
            prev = v;
        }
        // Demanding more confidence (smaller alpha) can only lower the bound;
        // the closed form alpha^(1/n) shows the bound grows with alpha.
        double prev_conf = 0.0;
        for (double conf : {0.8, 0.95, 0.99, 0.999}) {
            double v = clopper_pearson_lower(40, 50, conf);
            if (prev_conf > 0.0) CHECK(v <= prev_conf + 1e-10);
            prev_conf = v;
        }
        CHECK(clopper_pearson_lower(40, 50, 0.95) > clopper_pearson_lower(40, 50, 0.999));
    }
    SECTION("bad arguments are rejected") {
        CHECK_THROWS_AS(clopper_pearson_lower(5, 4, 0.9), std::invalid_argument);
        CHECK_THROWS_AS(clopper_pearson_lower(1, 4, 1.0), std::invalid_argument);
    }
}

TEST_CASE("expected logits over internal randomness") {
    NetworkConfig cfg;
    cfg.block_channels = {2};
    HycasNetwork net = make_network(cfg, 21);
    Rng rng(73);
    Tensor x({8, 8, 1});
    for (auto& v : x.data) v = rng.uniform();

    SECTION("deterministic configuration: Z equals the plain logits exactly") {
        NetworkConfig det = cfg;
        det.rani_enabled = false;
        det.rpfan_stochastic = false;
        HycasNetwork dnet = make_network(det, 22);
        auto z1 = expected_logits(dnet, x, 1, 5);
        auto z64 = expected_logits(dnet, x, 64, 99);
        auto direct = network_logits(dnet, x, noise_state_for(123, 0));
        for (std::size_t k = 0; k < z1.size(); ++k) {
            CHECK(z1[k] == direct[k]);
            CHECK(z64[k] == Catch::Approx(direct[k]).margin(1e-12));
        }
    }
    SECTION("same seed and count are bit-identical") {
        auto a = expected_logits(net, x, 32, 7);
        auto b = expected_logits(net, x, 32, 7);
        CHECK(a == b);
        auto c = expected_logits(net, x, 32, 8);
        CHECK(a != c);
    }
    SECTION("standard error shrinks like the square root of the sample count") {
        auto small = sample_logits(net, x, 64, 31);
        auto large = sample_logits(net, x, 4096, 31);
        auto se = [](const std::vector<std::vector<double>>& rows) {
            double mean = 0.0;
            for (const auto& r : rows) mean += r[0];
            mean /= rows.size();
            double var = 0.0;
            for (const auto& r : rows) var += (r[0] - mean) * (r[0] - mean);
            var /= (rows.size() - 1);
            return std::sqrt(var / rows.size());
        };
        double ratio = se(small) / se(large);
        CHECK(ratio > 4.0);   // ideal 8
        CHECK(ratio < 16.0);
    }
}

TEST_CASE("margin certificate") {
    SECTION("gap of one certifies radius 1/4") {
        Certificate c = margin_certificate({2.0, 1.0, 0.0}, 64);
        CHECK(!c.abstain);
        CHECK(c.label == 0);
        CHECK(c.radius_l2 == Catch::Approx(0.25).margin(1e-15));
    }
    SECTION("tied top logits abstain") {
        Certificate c = margin_certificate({1.0, 1.0}, 64);
        CHECK(c.abstain);
        CHECK(c.radius_l2 == 0.0);
        CHECK(c.radius_linf == 0.0);
    }
    SECTION("l_inf radius divides by sqrt(d)") {
        Certificate c = margin_certificate({1.5, 0.5}, 16);
        CHECK(c.radius_l2 == Catch::Approx(0.25).margin(1e-15));
        CHECK(c.radius_linf == Catch::Approx(0.0625).margin(1e-15));
    }
}

TEST_CASE("margin certificate with confidence bounds") {
    SECTION("zero-variance samples reduce to the plain margin certificate") {
        std::vector<std::vector<double>> rows(10, {1.2, 0.4, -0.1});
        Certificate lcb = margin_certificate_lcb(rows, 0.05, 64);
        Certificate plain = margin_certificate(rows[0], 64);
        CHECK(lcb.label == plain.label);
        CHECK(lcb.radius_l2 == Catch::Approx(plain.radius_l2).margin(1e-12));
    }
    SECTION("overlapping bounds abstain") {
        std::vector<std::vector<double>> rows;
        Rng rng(77);
        for (int i = 0; i < 12; ++i) rows.push_back({0.02 * rng.normal(), 0.02 * rng.normal() + 0.001});
        Certificate c = margin_certificate_lcb(rows, 0.05, 64);
        CHECK(c.abstain);
    }
    SECTION("coverage of the true margin at confidence 1 - alpha") {
        const double alpha = 0.05;
        const std::vector<double> mu{1.0, 0.4, -0.2};
        const double true_radius = (mu[0] - mu[1]) / 4.0;
        Rng rng(79);
        int miss = 0;
        const int trials = 10000;
        for (int t = 0; t < trials; ++t) {
            std::vector<std::vector<double>> rows;
            for (int i = 0; i < 40; ++i) {
                std::vector<double> row(3);
                for (int c = 0; c < 3; ++c) row[c] = mu[c] + 0.3 * rng.normal();
                rows.push_back(std::move(row));
            }
            Certificate c = margin_certificate_lcb(rows, alpha, 64);
            bool covered = c.abstain || (c.label == 0 && c.radius_l2 <= true_radius + 1e-12);
            if (!covered) ++miss;
        }
        double miss_rate = static_cast<double>(miss) / trials;
        INFO("miss rate: " << miss_rate);
        CHECK(miss_rate <= alpha);
    }
    SECTION("hoeffding mode stays within the clamp-derived width") {
        std::vector<std::vector<double>> rows(50, {0.9, -0.9});
        Certificate c = margin_certificate_lcb(rows, 0.01, 64, LcbMode::kHoeffding, -1.0, 1.0);
        CHECK(!c.abstain);
        CHECK(c.radius_l2 < margin_certificate(rows[0], 64).radius_l2);
    }
}

TEST_CASE("randomized smoothing certification") {
    SECTION("radius formula recovers sigma at p = Phi(1)") {
        CHECK(rs_radius(0.25, gauss_cdf(1.0)) == Catch::Approx(0.25).margin(1e-12));
        CHECK(rs_radius(0.25, 0.5) == 0.0);
        CHECK(rs_radius(0.25, 0.3) == 0.0);
    }
    SECTION("a fair-coin classifier always abstains") {
        Tensor x({4});
        McConfig cfg;
        cfg.n0 = 50;
        cfg.n = 2000;
        cfg.alpha = 0.001;
        cfg.sigma = 0.5;
        for (int run = 0; run < 20; ++run) {
            SmoothedPredictor coin = [run](const Tensor&, const NoiseState& ns) {
                Rng rng(derive_seed(ns.omega_seed, 0xC0117));
                return static_cast<int>(rng.uniform_below(2));
            };
            Certificate c = rs_certify_fn(coin, x, 2, cfg, 1000 + run);
            CHECK(c.abstain);
            CHECK(c.radius_l2 == 0.0);
        }
    }
    SECTION("halfspace classifier: certified radius is sound and near-tight") {
        // f(x) = [x_0 + eps_0 > 0]; smoothed top-class probability at x is
        // p = Phi(x_0 / sigma), so the true radius is sigma * PhiInv(p).
        McConfig cfg;
        cfg.n0 = 100;
        cfg.n = 2000;
        cfg.alpha = 0.001;
        cfg.sigma = 0.5;
        Tensor x({8});
        x.data[0] = 0.6;
        const double p_true = gauss_cdf(x.data[0] / cfg.sigma);
        const double r_true = cfg.sigma * inv_gauss_cdf(p_true);
        int exceed = 0;
        for (int run = 0; run < 50; ++run) {
            SmoothedPredictor half = [&](const Tensor& base, const NoiseState& ns) {
                return (base.data[0] + ns.epsilon->data[0]) > 0.0 ? 1 : 0;
            };
            Certificate c = rs_certify_fn(half, x, 2, cfg, 555 + run);
            if (!c.abstain) {
                CHECK(c.label == 1);
                if (c.radius_l2 > r_true) ++exceed;
            }
        }
        CHECK(exceed == 0);  // 50 runs at alpha = 1e-3: any excess is a red flag
    }
}

TEST_CASE("deterministic Lipschitz branch and branch selection") {
    NetworkConfig cfg;
    cfg.block_channels = {2};
    HycasNetwork net = make_network(cfg, 23);

    SECTION("uncalibrated networks are rejected") {
        Tensor x({8, 8, 1}, 0.3);
        CHECK_THROWS_AS(lip_certify(net, x, noise_state_for(3, 0)), std::invalid_argument);
    }

    calibrate(net);
    Rng rng(81);
    Tensor x({8, 8, 1});
    for (auto& v : x.data) v = rng.uniform();
    NoiseState frozen = noise_state_for(5, 0);

    SECTION("radius is a quarter of the frozen-noise margin") {
        auto s = network_logits(net, x, frozen);
        Certificate c = lip_certify(net, x, frozen);
        double gap = std::fabs(s[0] - s[1]);
        CHECK(c.radius_l2 == Catch::Approx(gap / 4.0).margin(1e-15));
        CHECK(c.label == argmax(s));
    }
    SECTION("no perturbation within the certified radius flips the frozen decision") {
        int checked = 0;
        for (int p = 0; p < 8 && checked < 5; ++p) {
            Tensor point({8, 8, 1});
            for (auto& v : point.data) v = rng.uniform();
            Certificate c = lip_certify(net, point, frozen);
            if (c.abstain) continue;
            ++checked;
            for (int trial = 0; trial < 200; ++trial) {
                Tensor delta({8, 8, 1});
                for (auto& v : delta.data) v = rng.normal();
                double norm = l2_norm(delta);
                Tensor probe = point;
                for (std::size_t i = 0; i < probe.size(); ++i)
                    probe.data[i] += delta.data[i] / norm * 0.99 * c.radius_l2;
                CHECK(network_predict(net, probe, frozen) == c.label);
            }
        }
        CHECK(checked >= 3);
    }
    SECTION("the stronger branch wins and ties go to randomized smoothing") {
        McConfig mc;
        mc.n0 = 20;
        mc.n = 200;
        mc.alpha = 0.01;
        mc.sigma = 0.25;
        Certificate combined = certify(net, x, mc, 99);
        CHECK((combined.method == CertMethod::kRs || combined.method == CertMethod::kLipMargin));

        Certificate rs = make_certificate(1, 0.3, 64, CertMethod::kRs, 0.995);
        Certificate lip = make_certificate(1, 0.1, 64, CertMethod::kLipMargin, 0.995);
        CHECK(pick_stronger(rs, lip).method == CertMethod::kRs);
        CHECK(pick_stronger(lip, rs).radius_l2 == 0.3);

        Certificate tie_rs = make_certificate(1, 0.2, 64, CertMethod::kRs, 0.995);
        Certificate tie_lip = make_certificate(1, 0.2, 64, CertMethod::kLipMargin, 0.995);
        CHECK(pick_stronger(tie_rs, tie_lip).method == CertMethod::kRs);

        Certificate a0 = make_certificate(0, 0.0, 64, CertMethod::kRs, 0.995);
        Certificate b0 = make_certificate(1, 0.0, 64, CertMethod::kLipMargin, 0.995);
        CHECK(pick_stronger(a0, b0).abstain);
    }
}
