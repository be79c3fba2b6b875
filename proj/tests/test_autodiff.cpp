#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hycas/autodiff.hpp"
#include "hycas/rng.hpp"
#include "oracle_helpers.hpp"

using hycas::Padding;
using hycas::Rng;
using hycas::Shape;
using hycas::Tape;
using hycas::Tensor;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("conv2d identity and linearity basics") {
    Rng rng(1);
    Tensor x = random_tensor({4, 5, 3}, rng);

    SECTION("1x1 identity kernel reproduces the input") {
        Tensor k({1, 1, 3, 3});
        for (int c = 0; c < 3; ++c) k.at4(0, 0, c, c) = 1.0;
        Tape tape;
        auto out = tape.conv2d(tape.constant(x), tape.constant(k), Padding::kCircular);
        CHECK(tape.value(out).data == x.data);
    }

    SECTION("zero input maps to zero output") {
        Tensor zero({4, 5, 3});
        Tensor k = random_tensor({3, 3, 3, 2}, rng);
        Tape tape;
        auto out = tape.conv2d(tape.constant(zero), tape.constant(k), Padding::kCircular);
        for (double v : tape.value(out).data) CHECK(v == 0.0);
    }

    SECTION("channel mismatch is rejected") {
        Tensor k = random_tensor({3, 3, 2, 2}, rng);
        Tape tape;
        auto xid = tape.constant(x);
        CHECK_THROWS_AS(tape.conv2d(xid, tape.constant(k), Padding::kCircular), std::invalid_argument);
    }
}

TEST_CASE("circular conv2d matches the materialized block-circulant operator") {
    Rng rng(7);
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 3}, rng);

    Tape tape;
    auto out = tape.conv2d(tape.constant(x), tape.constant(k), Padding::kCircular);

    Eigen::MatrixXd m = oracle::circular_conv_matrix(k, 4, 4);
    Eigen::VectorXd xv(4 * 4 * 2);
    for (std::size_t i = 0; i < x.data.size(); ++i) xv(static_cast<int>(i)) = x.data[i];
    Eigen::VectorXd yv = m * xv;
    const auto& y = tape.value(out).data;
    REQUIRE(y.size() == static_cast<std::size_t>(yv.size()));
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(std::fabs(y[i] - yv(static_cast<int>(i))) < 1e-12);
}

TEST_CASE("circular conv2d is exactly linear in its input") {
    Rng rng(11);
    Tensor k = random_tensor({3, 3, 2, 2}, rng);
    Tensor x = random_tensor({6, 6, 2}, rng);
    Tensor y = random_tensor({6, 6, 2}, rng);
    const double a = 1.7, b = -0.4;

    auto apply = [&](const Tensor& in) {
        Tape tape;
        return tape.value(tape.conv2d(tape.constant(in), tape.constant(k), Padding::kCircular));
    };

    Tensor mix({6, 6, 2});
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    Tensor fx = apply(x), fy = apply(y), fmix = apply(mix);
    for (std::size_t i = 0; i < fmix.data.size(); ++i)
        CHECK(std::fabs(fmix.data[i] - (a * fx.data[i] + b * fy.data[i])) < 1e-10);
}

TEST_CASE("conv adjoint is the exact transpose") {
    Rng rng(13);
    for (Padding pad : {Padding::kCircular, Padding::kZero}) {
        Tensor k = random_tensor({3, 3, 2, 4}, rng);
        Tensor v = random_tensor({6, 5, 2}, rng);
        Tensor u = random_tensor({6, 5, 4}, rng);

        Tensor cv(hycas::detail::conv_output_shape(v.shape, k.shape, pad, 1));
        hycas::detail::conv2d_forward(v, k, pad, 1, cv);
        Tensor atu(v.shape);
        hycas::detail::conv2d_adjoint_input(u, k, pad, 1, atu);

        CHECK(std::fabs(hycas::dot(u.data, cv.data) - hycas::dot(atu.data, v.data)) < 1e-10);
    }
}

TEST_CASE("dense layer examples") {
    Rng rng(3);
    SECTION("identity weight, zero bias") {
        Tensor x = random_tensor({5}, rng);
        Tensor w({5, 5});
        for (int i = 0; i < 5; ++i) w.data[static_cast<std::size_t>(i) * 5 + i] = 1.0;
        Tensor b({5});
        Tape tape;
        auto out = tape.dense(tape.constant(x), tape.constant(w), tape.constant(b));
        CHECK(tape.value(out).data == x.data);
    }
    SECTION("zero weight returns the bias") {
        Tensor x = random_tensor({4}, rng);
        Tensor w({3, 4});
        Tensor b = random_tensor({3}, rng);
        Tape tape;
        auto out = tape.dense(tape.constant(x), tape.constant(w), tape.constant(b));
        CHECK(tape.value(out).data == b.data);
    }
    SECTION("random case matches a hand-computed product") {
        Tensor x = random_tensor({6}, rng);
        Tensor w = random_tensor({4, 6}, rng);
        Tensor b = random_tensor({4}, rng);
        Tape tape;
        auto out = tape.dense(tape.constant(x), tape.constant(w), tape.constant(b));
        for (int k = 0; k < 4; ++k) {
            double expect = b.data[k];
            for (int l = 0; l < 6; ++l) expect += w.data[static_cast<std::size_t>(k) * 6 + l] * x.data[l];
            CHECK(tape.value(out).data[k] == Catch::Approx(expect).margin(1e-14));
        }
    }
    SECTION("dimension mismatch is rejected") {
        Tensor x = random_tensor({6}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        Tensor b = random_tensor({4}, rng);
        Tape tape;
        auto xid = tape.constant(x);
        CHECK_THROWS_AS(tape.dense(xid, tape.constant(w), tape.constant(b)), std::invalid_argument);
    }
}

TEST_CASE("elementwise examples") {
    Tape tape;
    SECTION("groupsort2 on sorted pairs is the identity") {
        Tensor x({1, 1, 4}, {-1.0, 2.0, 0.5, 0.7});
        auto out = tape.groupsort2(tape.constant(x));
        CHECK(tape.value(out).data == x.data);
    }
    SECTION("groupsort2 sorts within pairs and preserves the l2 norm") {
        Rng rng(9);
        Tensor x({2, 3, 6});
        for (auto& v : x.data) v = rng.normal();
        auto out = tape.groupsort2(tape.constant(x));
        const auto& y = tape.value(out);
        CHECK(hycas::l2_norm(y) == Catch::Approx(hycas::l2_norm(x)).epsilon(0.0).margin(1e-15));
        Tape tape2;
        auto twice = tape2.groupsort2(tape2.constant(y));
        CHECK(tape2.value(twice).data == y.data);
    }
    SECTION("odd channel count is rejected") {
        Tensor x({2, 2, 3});
        auto id = tape.constant(x);
        CHECK_THROWS_AS(tape.groupsort2(id), std::invalid_argument);
    }
    SECTION("sigmoid(0) = 0.5") {
        Tensor x({1}, {0.0});
        auto out = tape.sigmoid(tape.constant(x));
        CHECK(tape.value(out).data[0] == 0.5);
    }
    SECTION("hadamard with ones is the identity") {
        Rng rng(10);
        Tensor x({3, 2, 2});
        for (auto& v : x.data) v = rng.normal();
        auto out = tape.hadamard(tape.constant(x), tape.constant(Tensor::full({3, 2, 2}, 1.0)));
        CHECK(tape.value(out).data == x.data);
    }
    SECTION("shape mismatch is rejected") {
        auto a = tape.constant(Tensor({2, 2, 2}));
        auto b = tape.constant(Tensor({2, 2, 3}));
        CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
        CHECK_THROWS_AS(tape.hadamard(a, b), std::invalid_argument);
    }
}

TEST_CASE("reduce examples") {
    Tape tape;
    SECTION("gap of a constant feature map returns the constant per channel") {
        Tensor x({4, 4, 3});
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx)
                for (int c = 0; c < 3; ++c) x.at3(y, xx, c) = 1.5 + c;
        auto out = tape.gap(tape.constant(x));
        for (int c = 0; c < 3; ++c) CHECK(tape.value(out).data[c] == Catch::Approx(1.5 + c).margin(1e-14));
    }
    SECTION("cross-entropy of near-perfect logits tends to zero") {
        Tensor logits({3}, {60.0, 0.0, -5.0});
        auto out = tape.softmax_cross_entropy(tape.constant(logits), 0);
        CHECK(tape.value(out).data[0] < 1e-15);
        CHECK(tape.value(out).data[0] >= 0.0);
    }
    SECTION("cross-entropy of uniform logits is ln K") {
        const int k = 7;
        Tensor logits({k}, std::vector<double>(k, 0.3));
        auto out = tape.softmax_cross_entropy(tape.constant(logits), 4);
        CHECK(tape.value(out).data[0] == Catch::Approx(std::log(static_cast<double>(k))).margin(1e-12));
    }
    SECTION("out-of-range target is rejected") {
        auto logits = tape.constant(Tensor({3}));
        CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, 3), std::invalid_argument);
        CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, -1), std::invalid_argument);
    }
}

TEST_CASE("backward basics") {
    Rng rng(21);
    SECTION("loss = sum(x) gives an all-ones gradient") {
        Tensor x = random_tensor({3, 3, 2}, rng).with_grad();
        Tape tape;
        auto loss = tape.sum(tape.param(x));
        tape.backward(loss);
        for (double g : *x.grad) CHECK(g == 1.0);
    }
    SECTION("loss = 0.5 * |x|^2 gives gradient x") {
        Tensor x = random_tensor({4, 2, 2}, rng).with_grad();
        Tape tape;
        auto xid = tape.param(x);
        auto loss = tape.scale(tape.sum(tape.hadamard(xid, xid)), 0.5);
        tape.backward(loss);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            CHECK((*x.grad)[i] == Catch::Approx(x.data[i]).margin(1e-14));
    }
    SECTION("non-scalar loss is rejected") {
        Tensor x = random_tensor({3}, rng).with_grad();
        Tape tape;
        auto xid = tape.param(x);
        CHECK_THROWS_AS(tape.backward(xid), std::invalid_argument);
    }
}

TEST_CASE("replaying a recorded forward is bit-identical") {
    Rng rng(31);
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 2}, rng).with_grad();
    Tensor w = random_tensor({3, 2}, rng).with_grad();
    Tensor b = random_tensor({3}, rng).with_grad();

    Tape tape;
    auto h = tape.conv2d(tape.constant(x), tape.param(k), Padding::kCircular);
    auto logits = tape.dense(tape.gap(tape.sigmoid(h)), tape.param(w), tape.param(b));
    auto loss = tape.softmax_cross_entropy(logits, 1);

    auto logits_before = tape.value(logits).data;
    double loss_before = tape.value(loss).data[0];
    tape.replay();
    CHECK(tape.value(logits).data == logits_before);
    CHECK(tape.value(loss).data[0] == loss_before);
}

TEST_CASE("every primitive passes central finite differences") {
    Rng rng(77);
    const int coords = 24;

    // A composite graph touching one primitive at a time, reduced to a scalar
    // by a fixed random weighting so every output coordinate matters.
    auto weighted = [](Tape& tape, Tape::Id id, const Tensor& weights) {
        return tape.sum(tape.hadamard(id, tape.constant(weights)));
    };

    SECTION("conv2d (circular and zero, stride 1 and 2)") {
        for (Padding pad : {Padding::kCircular, Padding::kZero}) {
            for (int stride : {1, 2}) {
                Tensor x = random_tensor({4, 4, 2}, rng).with_grad();
                Tensor k = random_tensor({3, 3, 2, 2}, rng).with_grad();
                Tape tape;
                auto out = tape.conv2d(tape.param(x), tape.param(k), pad, stride);
                Tensor wts = random_tensor(tape.value(out).shape, rng);
                auto loss = weighted(tape, out, wts);
                tape.backward(loss);
                auto eval = [&] {
                    tape.replay();
                    return tape.value(loss).data[0];
                };
                for (int i = 0; i < coords; ++i) {
                    bool on_kernel = (i % 2 == 0);
                    Tensor& target = on_kernel ? k : x;
                    std::size_t idx = rng.uniform_below(target.data.size());
                    double fd = oracle::fd_slope(eval, &target.data[idx]);
                    CHECK(oracle::grad_matches((*target.grad)[idx], fd));
                }
            }
        }
    }

    SECTION("dense, activations, reductions, dct") {
        Tensor x = random_tensor({4, 4, 2}, rng).with_grad();
        Tensor w = random_tensor({3, 2}, rng).with_grad();
        Tensor b = random_tensor({3}, rng).with_grad();
        Tensor cvec = random_tensor({2}, rng).with_grad();

        Tape tape;
        auto xid = tape.param(x);
        auto spread = tape.hadamard(tape.idct2(tape.clip01(tape.dct2(xid))),
                                    tape.expand_channels(tape.param(cvec), 4, 4));
        auto act = tape.groupsort2(tape.sigmoid(tape.relu(spread)));
        auto pooled = tape.gap(act);
        auto logits = tape.dense(pooled, tape.param(w), tape.param(b));
        auto ce = tape.softmax_cross_entropy(logits, 2);
        auto loss = tape.add(ce, tape.mean(tape.scale(spread, 0.25)));
        tape.backward(loss);

        auto eval = [&] {
            tape.replay();
            return tape.value(loss).data[0];
        };
        std::vector<Tensor*> params{&x, &w, &b, &cvec};
        for (int i = 0; i < coords; ++i) {
            Tensor& target = *params[i % params.size()];
            std::size_t idx = rng.uniform_below(target.data.size());
            double fd = oracle::fd_slope(eval, &target.data[idx]);
            CHECK(oracle::grad_matches((*target.grad)[idx], fd));
        }
    }
}
