#pragma once

#include <algorithm>
#include <optional>

#include "hycas/attack.hpp"
#include "hycas/data.hpp"
#include "hycas/network.hpp"

namespace hycas {

/// Thrown when a training loss stops being finite; the CLI maps it to the
/// numeric-divergence exit code.
struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class OptimizerKind { kSgd, kSgdMomentum, kAdamW };

/// Composite loss weights: zeta (FDPAN), phi (SNCAN), nu (RPFAN) branch
/// terms plus kappa on the fused cross-entropy.
struct LossWeights {
    double zeta = 1.0, phi = 1.0, nu = 1.0, kappa = 1.0;
};

struct TrainConfig {
    int epochs = 140;
    int batch_size = 16;
    double learning_rate = 0.02;
    OptimizerKind optimizer = OptimizerKind::kAdamW;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double sigma = 0.25;  // train-time Gaussian input noise
    int lr_step_size = 60;  // step scheduler: multiply the rate by lr_decay
    double lr_decay = 0.3;  // every lr_step_size epochs (1.0 disables)
    LossWeights loss_weights;
    bool learnable_loss_weights = false;
    std::optional<AttackConfig> attack;  // adversarial mode
    int attack_warmup_epochs = 20;       // clean epochs before the min-max phase
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs/batch_size must be >= 1");
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
        if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
        if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
        if (lr_step_size < 1) throw std::invalid_argument("lr_step_size must be >= 1");
        if (lr_decay <= 0.0 || lr_decay > 1.0) throw std::invalid_argument("lr_decay must be in (0,1]");
    }
};

struct TrainHistoryRow {
    int epoch = 0;
    double mean_loss = 0.0;
    double clean_accuracy = 0.0;
    double max_kernel_norm = 0.0;  // exact Fourier norm at the epoch boundary
};

struct TrainResult {
    std::vector<TrainHistoryRow> history;
    LossWeights final_weights;
};

inline double cross_entropy(const std::vector<double>& logits, int target) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    return std::log(lse) + mx - logits[target];
}

/// Weighted multi-branch objective:
/// kappa CE(fused) + zeta CE(FDPAN) + phi CE(SNCAN) + nu CE(RPFAN).
inline double hycas_loss(const std::vector<double>& fused_logits,
                         const std::array<std::vector<double>, 3>& stream_logits, int y,
                         const LossWeights& w) {
    return w.kappa * cross_entropy(fused_logits, y) + w.zeta * cross_entropy(stream_logits[0], y) +
           w.phi * cross_entropy(stream_logits[1], y) + w.nu * cross_entropy(stream_logits[2], y);
}

namespace detail {

/// Plain SGD / momentum SGD / AdamW over the named parameter list.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, const TrainConfig& cfg,
              const std::vector<std::pair<std::string, Tensor*>>& params)
        : kind_(kind), cfg_(cfg) {
        for (auto& [name, t] : params) {
            (void)name;
            slot1_.emplace_back(t->size(), 0.0);
            slot2_.emplace_back(t->size(), 0.0);
        }
    }

    void step(const std::vector<std::pair<std::string, Tensor*>>& params) {
        ++t_;
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = *params[p].second;
            const std::vector<double>& g = *w.grad;
            switch (kind_) {
                case OptimizerKind::kSgd:
                    for (std::size_t i = 0; i < w.data.size(); ++i)
                        w.data[i] -= lr_ * (g[i] + cfg_.weight_decay * w.data[i]);
                    break;
                case OptimizerKind::kSgdMomentum:
                    for (std::size_t i = 0; i < w.data.size(); ++i) {
                        slot1_[p][i] = cfg_.momentum * slot1_[p][i] + g[i] + cfg_.weight_decay * w.data[i];
                        w.data[i] -= lr_ * slot1_[p][i];
                    }
                    break;
                case OptimizerKind::kAdamW: {
                    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
                    for (std::size_t i = 0; i < w.data.size(); ++i) {
                        slot1_[p][i] = b1 * slot1_[p][i] + (1.0 - b1) * g[i];
                        slot2_[p][i] = b2 * slot2_[p][i] + (1.0 - b2) * g[i] * g[i];
                        double mh = slot1_[p][i] / c1, vh = slot2_[p][i] / c2;
                        w.data[i] -= lr_ * (mh / (std::sqrt(vh) + eps) + cfg_.weight_decay * w.data[i]);
                    }
                    break;
                }
            }
        }
    }

    void set_learning_rate(double lr) { lr_ = lr; }

private:
    OptimizerKind kind_;
    TrainConfig cfg_;
    double lr_ = cfg_.learning_rate;
    int t_ = 0;
    std::vector<std::vector<double>> slot1_, slot2_;
};

/// Trainable kernels of the network (SNCAN and FDPAN per block).
inline std::vector<KernelSpec*> trained_kernels(HycasNetwork& net) {
    std::vector<KernelSpec*> out;
    for (auto& b : net.blocks) {
        out.push_back(&b.fdpan.kernels[0]);
        out.push_back(&b.sncan.kernels[0]);
    }
    return out;
}

/// In-loop spectral step: power-iteration estimate (default T) feeding the
/// shared renormalisation rule.
inline void renormalize_kernels_pi(HycasNetwork& net) {
    for (KernelSpec* k : trained_kernels(net)) {
        k->sigma_hat = spectral_norm_power_iter(*k, net.config.input_h, net.config.input_w);
        *k = rescale_kernel(std::move(*k));
        k->fourier_audited = false;
    }
}

/// Epoch-boundary spectral step: exact Fourier bound, rescale, re-audit.
/// Returns the maximum audited norm after rescaling.
inline double renormalize_kernels_fourier(HycasNetwork& net) {
    double worst = 0.0;
    for (KernelSpec* k : trained_kernels(net)) {
        audit_kernel(*k, net.config.input_h, net.config.input_w);
        *k = rescale_kernel(std::move(*k));
        worst = std::max(worst, audit_kernel(*k, net.config.input_h, net.config.input_w));
    }
    return worst;
}

/// Per-class composite loss nodes recorded once on a training evaluator.
struct LossGraph {
    std::vector<Tape::Id> per_class;
    std::array<Tensor, 4> weight_params;  // log-weights when learnable

    static LossGraph build(NetworkEvaluator& ev, int classes, const TrainConfig& cfg) {
        LossGraph lg;
        Tape& tape = ev.tape();
        std::array<Tape::Id, 4> w;
        if (cfg.learnable_loss_weights) {
            const double init[4] = {cfg.loss_weights.zeta, cfg.loss_weights.phi,
                                    cfg.loss_weights.nu, cfg.loss_weights.kappa};
            for (int i = 0; i < 4; ++i) {
                lg.weight_params[i] = Tensor({1}, {std::log(std::max(init[i], 1e-12))});
                lg.weight_params[i].with_grad();
                w[i] = tape.exp(tape.param(lg.weight_params[i]));
            }
        }
        for (int t = 0; t < classes; ++t) {
            std::array<Tape::Id, 4> ce{tape.softmax_cross_entropy(ev.stream_logits_id(0), t),
                                       tape.softmax_cross_entropy(ev.stream_logits_id(1), t),
                                       tape.softmax_cross_entropy(ev.stream_logits_id(2), t),
                                       tape.softmax_cross_entropy(ev.logits_id(), t)};
            const double fixed[4] = {cfg.loss_weights.zeta, cfg.loss_weights.phi,
                                     cfg.loss_weights.nu, cfg.loss_weights.kappa};
            Tape::Id total = -1;
            for (int i = 0; i < 4; ++i) {
                Tape::Id term = cfg.learnable_loss_weights ? tape.hadamard(w[i], ce[i])
                                                           : tape.scale(ce[i], fixed[i]);
                total = (i == 0) ? term : tape.add(total, term);
            }
            lg.per_class.push_back(total);
        }
        return lg;
    }

    LossWeights current(const TrainConfig& cfg) const {
        if (!cfg.learnable_loss_weights) return cfg.loss_weights;
        return LossWeights{std::exp(weight_params[0].data[0]), std::exp(weight_params[1].data[0]),
                           std::exp(weight_params[2].data[0]), std::exp(weight_params[3].data[0])};
    }
};

inline void check_gate_convexity(const HycasNetwork& net) {
    for (const auto& b : net.blocks) {
        Tensor alpha = gate_weights(b.gate);
        const int c = b.gate.channels();
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int row = 0; row < 3; ++row) s += alpha.data[static_cast<std::size_t>(row) * c + ch];
            if (std::fabs(s - 1.0) > 1e-7)
                throw std::logic_error("gate convexity violated during training");
        }
    }
}

}  // namespace detail

/// Clean accuracy with one fresh NoiseState per sample (the inference
/// protocol), evaluated through the given evaluator so parameter updates are
/// picked up.
inline double clean_accuracy(NetworkEvaluator& ev, const Dataset& data, std::uint64_t seed) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& logits = ev.eval(data.images[i], noise_state_for(seed, i));
        if (argmax(logits) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline double clean_accuracy(const HycasNetwork& net, const Dataset& data, std::uint64_t seed) {
    NetworkEvaluator ev = NetworkEvaluator::inference(net);
    return clean_accuracy(ev, data, seed);
}

namespace detail {

template <typename MakeInput>
TrainResult train_loop(HycasNetwork& net, const Dataset& data, const TrainConfig& cfg,
                       MakeInput&& make_input) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("training on an empty dataset");
    if (data.num_classes != net.classes())
        throw std::invalid_argument("dataset/network class count mismatch");

    NetworkEvaluator ev = NetworkEvaluator::training(net);
    LossGraph losses = LossGraph::build(ev, net.classes(), cfg);

    auto params = trainable_params(net);
    if (cfg.learnable_loss_weights)
        for (int i = 0; i < 4; ++i)
            params.emplace_back("loss.weight" + std::to_string(i), &losses.weight_params[i]);
    Optimizer opt(cfg.optimizer, cfg, params);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    std::uint64_t sample_counter = 0, batch_counter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_learning_rate(cfg.learning_rate *
                              std::pow(cfg.lr_decay, epoch / cfg.lr_step_size));
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5eaf + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (auto& [name, t] : params) {
                (void)name;
                t->zero_grad();
            }
            // Internal randomness is resampled once per minibatch.
            NoiseState batch_noise = noise_state_for(derive_seed(cfg.seed, 0xba7c4), batch_counter);
            ++batch_counter;

            for (std::size_t idx = start; idx < end; ++idx) {
                const std::size_t s = order[idx];
                Tensor input = make_input(net, data.images[s], data.labels[s], batch_noise,
                                          sample_counter, epoch);
                ++sample_counter;
                ev.set_input(input);
                ev.set_noise(batch_noise);
                ev.run();
                double loss = ev.tape().value(losses.per_class[data.labels[s]]).data[0];
                if (!std::isfinite(loss))
                    throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch));
                loss_sum += loss;
                ++loss_count;
                ev.tape().backward(losses.per_class[data.labels[s]]);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& [name, t] : params) {
                (void)name;
                for (auto& g : *t->grad) g *= inv;
            }
            opt.step(params);
            renormalize_kernels_pi(net);
        }

        TrainHistoryRow row;
        row.epoch = epoch;
        row.mean_loss = loss_sum / static_cast<double>(loss_count);
        row.max_kernel_norm = renormalize_kernels_fourier(net);
        if (row.max_kernel_norm > 1.0 + KernelSpec::kEpsilonGuard)
            throw std::logic_error("spectral audit failed at an epoch boundary");
        detail::check_gate_convexity(net);
        row.clean_accuracy = clean_accuracy(ev, data, derive_seed(cfg.seed, 0xacc + epoch));
        result.history.push_back(row);
    }

    calibrate(net);
    result.final_weights = losses.current(cfg);
    return result;
}

}  // namespace detail

/// Gaussian-noise (certified) training: per minibatch resample the internal
/// randomness once, per sample draw a fresh eps ~ N(0, sigma^2 I), take an
/// optimizer step on the composite loss, re-apply spectral normalisation
/// after every step, and globally calibrate after the final epoch.
inline TrainResult train_certified(HycasNetwork& net, const Dataset& data, const TrainConfig& cfg) {
    std::uint64_t eps_stream = derive_seed(cfg.seed, 0xe9511);
    return detail::train_loop(
        net, data, cfg,
        [eps_stream, &cfg](HycasNetwork&, const Tensor& x, int, const NoiseState&,
                           std::uint64_t counter, int) {
            Tensor noisy = x;
            if (cfg.sigma > 0.0) {
                Rng rng(derive_seed(eps_stream, counter));
                for (auto& v : noisy.data) v += cfg.sigma * rng.normal();
            }
            return noisy;
        });
}

/// Min-max adversarial training: per minibatch, freeze the attack NoiseState
/// Omega[A]; craft x* with PGD on the composite loss target; update on a
/// distinct inference NoiseState (the batch noise). The attack noise is
/// derived from the batch noise, so it is resampled once per minibatch and
/// stays fixed while the adversarial examples are generated.
inline TrainResult train_adversarial(HycasNetwork& net, const Dataset& data,
                                     const TrainConfig& cfg) {
    if (!cfg.attack) throw std::invalid_argument("train_adversarial requires cfg.attack");
    std::uint64_t attack_stream = derive_seed(cfg.seed, 0xa77ac);
    return detail::train_loop(
        net, data, cfg,
        [attack_stream, &cfg](HycasNetwork& current, const Tensor& x, int label,
                              const NoiseState& batch_noise, std::uint64_t counter, int epoch) {
            if (epoch < cfg.attack_warmup_epochs) return x;
            NoiseState attack_noise{derive_seed(batch_noise.psi_seed, 0xadu),
                                    derive_seed(batch_noise.omega_seed, 0xadu), std::nullopt};
            AttackConfig acfg = *cfg.attack;
            acfg.seed = derive_seed(attack_stream, counter);
            AttackTarget target = make_network_target(current, label, attack_noise);
            return pgd_attack(target, x, acfg);
        });
}

}  // namespace hycas
