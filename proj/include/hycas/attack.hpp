#pragma once

#include <functional>
#include <memory>

#include "hycas/certify.hpp"
#include "hycas/data.hpp"
#include "hycas/network.hpp"

namespace hycas {

enum class AttackMethod { kPgd, kApgd };

/// White-box l_inf attack budget. The defaults mirror the evaluation
/// protocol: epsilon 8/255, step 20/255 (the projection keeps the oversized
/// step safe), 20 iterations, 5 restarts.
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double step = 20.0 / 255.0;
    int iters = 20;
    int restarts = 5;
    std::uint64_t seed = 0;
    bool random_init = true;

    void validate() const {
        if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
        if (iters < 0) throw std::invalid_argument("attack iters must be >= 0");
        if (restarts < 1) throw std::invalid_argument("attack restarts must be >= 1");
        if (step <= 0.0) throw std::invalid_argument("attack step must be > 0");
    }
};

/// Loss surface a white-box attack climbs: loss value plus input gradient,
/// and the (frozen-noise) prediction used to score success.
struct AttackTarget {
    std::function<double(const Tensor& x, Tensor* grad)> loss_and_grad;
    std::function<int(const Tensor& x)> predict;
};

/// Wraps a network as an attack target: fused cross-entropy at a frozen
/// NoiseState. The internal randomness stays fixed for the entire attack, so
/// gradients are taken through exactly the classifier being attacked.
inline AttackTarget make_network_target(const HycasNetwork& net, int label,
                                        const NoiseState& frozen_noise) {
    auto ev = NetworkEvaluator::shared_inference(net, true);
    ev->set_noise(frozen_noise);
    Tape::Id loss_id = ev->tape().softmax_cross_entropy(ev->logits_id(), label);

    AttackTarget target;
    target.loss_and_grad = [ev, loss_id](const Tensor& x, Tensor* grad) {
        ev->set_input(x);
        ev->run();
        double loss = ev->tape().value(loss_id).data[0];
        if (grad) {
            ev->tape().backward(loss_id);
            grad->shape = x.shape;
            grad->data = ev->tape().grad_of(ev->input_id());
        }
        return loss;
    };
    target.predict = [ev](const Tensor& x) {
        ev->set_input(x);
        ev->run();
        return argmax(ev->logits());
    };
    return target;
}

namespace detail {

inline Tensor attack_init_delta(const AttackConfig& cfg, const Shape& shape, int restart) {
    Tensor delta(shape);
    if (cfg.random_init && cfg.epsilon > 0.0) {
        Rng rng(derive_seed(cfg.seed, 0xde17a + restart));
        for (auto& v : delta.data) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    return delta;
}

/// Projects x + delta onto the epsilon ball around x intersected with the
/// pixel box [0,1]; returns the feasible iterate.
inline Tensor project(const Tensor& x, const Tensor& delta, double eps) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = std::min(eps, std::max(-eps, delta.data[i]));
        out.data[i] = std::min(1.0, std::max(0.0, x.data[i] + d));
    }
    return out;
}

}  // namespace detail

/// Projected gradient descent with sign steps (best-loss iterate over all
/// restarts, the initial point included, so the returned loss never falls
/// below the starting one).
inline Tensor pgd_attack(const AttackTarget& target, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    Tensor best = x;
    double best_loss = -1e300;
    Tensor grad;
    for (int r = 0; r < cfg.restarts; ++r) {
        Tensor adv = detail::project(x, detail::attack_init_delta(cfg, x.shape, r), cfg.epsilon);
        for (int it = 0; it <= cfg.iters; ++it) {
            double loss = target.loss_and_grad(adv, it < cfg.iters ? &grad : nullptr);
            if (loss > best_loss) {
                best_loss = loss;
                best = adv;
            }
            if (it == cfg.iters) break;
            Tensor delta(x.shape);
            for (std::size_t i = 0; i < x.size(); ++i) {
                double step = cfg.step * (grad.data[i] > 0.0 ? 1.0 : (grad.data[i] < 0.0 ? -1.0 : 0.0));
                delta.data[i] = adv.data[i] + step - x.data[i];
            }
            adv = detail::project(x, delta, cfg.epsilon);
        }
    }
    return best;
}

/// Momentum/step-adaptive PGD variant: sign-momentum steps (coefficient
/// 0.75), halving the step when the best loss has not improved over a
/// checkpoint window of ceil(0.22 * iters) iterations, restarting each window
/// from the best iterate. Same ball and pixel guarantees as pgd_attack.
inline Tensor apgd_attack(const AttackTarget& target, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    const int window = std::max(1, static_cast<int>(std::ceil(0.22 * cfg.iters)));
    Tensor best = x;
    double best_loss = -1e300;
    Tensor grad;
    for (int r = 0; r < cfg.restarts; ++r) {
        Tensor adv = detail::project(x, detail::attack_init_delta(cfg, x.shape, r), cfg.epsilon);
        Tensor momentum(x.shape);
        double step = cfg.step;
        Tensor restart_best = adv;
        double restart_best_loss = -1e300;
        double window_best = -1e300;
        int since_checkpoint = 0;

        for (int it = 0; it <= cfg.iters; ++it) {
            double loss = target.loss_and_grad(adv, it < cfg.iters ? &grad : nullptr);
            if (loss > restart_best_loss) {
                restart_best_loss = loss;
                restart_best = adv;
            }
            if (it == cfg.iters) break;

            if (++since_checkpoint >= window) {
                if (restart_best_loss <= window_best) {
                    step *= 0.5;
                    adv = restart_best;
                }
                window_best = restart_best_loss;
                since_checkpoint = 0;
            }

            Tensor delta(x.shape);
            for (std::size_t i = 0; i < x.size(); ++i) {
                double s = grad.data[i] > 0.0 ? 1.0 : (grad.data[i] < 0.0 ? -1.0 : 0.0);
                momentum.data[i] = 0.75 * momentum.data[i] + 0.25 * s;
                double m = momentum.data[i];
                double dir = m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0);
                delta.data[i] = adv.data[i] + step * dir - x.data[i];
            }
            adv = detail::project(x, delta, cfg.epsilon);
        }
        if (restart_best_loss > best_loss) {
            best_loss = restart_best_loss;
            best = restart_best;
        }
    }
    return best;
}

inline Tensor run_attack(AttackMethod method, const AttackTarget& target, const Tensor& x,
                         const AttackConfig& cfg) {
    return method == AttackMethod::kPgd ? pgd_attack(target, x, cfg) : apgd_attack(target, x, cfg);
}

/// Per-sample attack outcome as used by reports.
struct AttackOutcome {
    int clean_pred = -1;
    int attacked_pred = -1;
    bool clean_correct = false;
    bool attacked_correct = false;
};

/// Attacks one sample under the fixed-noise protocol: a fresh inference
/// NoiseState is drawn per sample and frozen through attack and evaluation.
inline AttackOutcome attack_sample(const HycasNetwork& net, const Tensor& x, int label,
                                   const AttackConfig& cfg, AttackMethod method,
                                   std::uint64_t sample_index) {
    NoiseState frozen = noise_state_for(derive_seed(cfg.seed, 0xeba1), sample_index);
    AttackConfig per_sample = cfg;
    per_sample.seed = derive_seed(cfg.seed, 0xa77ac + sample_index);

    AttackTarget target = make_network_target(net, label, frozen);
    AttackOutcome out;
    out.clean_pred = target.predict(x);
    out.clean_correct = (out.clean_pred == label);
    if (!out.clean_correct) {
        out.attacked_pred = out.clean_pred;
        out.attacked_correct = false;
        return out;
    }
    Tensor adv = run_attack(method, target, x, per_sample);
    out.attacked_pred = target.predict(adv);
    out.attacked_correct = (out.attacked_pred == label);
    return out;
}

/// Fraction of samples still correctly classified after a per-sample
/// best-of-restarts attack.
inline double robust_accuracy(const HycasNetwork& net, const Dataset& data, const AttackConfig& cfg,
                              AttackMethod method = AttackMethod::kPgd) {
    if (data.size() == 0) throw std::invalid_argument("robust_accuracy on an empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (attack_sample(net, data.images[i], data.labels[i], cfg, method, i).attacked_correct)
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace hycas
