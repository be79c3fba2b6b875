#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hycas/block.hpp"

namespace hycas {

/// Desk-scale architecture description: a stack of HyCAS blocks with
/// GroupSort activations in between and a single dense head on the pooled
/// features. The paper-scale residual backbones are replaced by 2-4 blocks.
struct NetworkConfig {
    int input_h = 8, input_w = 8, input_c = 1;
    int classes = 2;
    std::vector<int> block_channels{4, 4};
    int kernel_size = 3;
    int rpfan_kernel_size = 1;
    double cutoff_rho = 0.5;
    double skip_beta = 1.0;
    bool fusion_rani = false;
    int rani_stages = 4;
    int rpfan_batch = 2;
    bool rani_enabled = true;
    bool rpfan_stochastic = true;  // false pins the projection draw (deterministic mode)

    int input_dim() const { return input_h * input_w * input_c; }
};

/// A full HyCAS classifier: blocks, head, auxiliary per-stream heads (used
/// only by the multi-branch training loss) and the global Lipschitz
/// calibration state.
struct HycasNetwork {
    NetworkConfig config;
    std::vector<HycasBlock> blocks;
    Tensor head_weight, head_bias;
    std::array<Tensor, 3> aux_weight, aux_bias;  // per-stream heads at the last block
    double calibrator_gamma = 1.0;
    double lip_bound = 0.0;
    bool calibrated = false;

    int classes() const { return config.classes; }
};

/// Named views of every trainable tensor; the order is fixed and doubles as
/// the checkpoint layout.
inline std::vector<std::pair<std::string, Tensor*>> trainable_params(HycasNetwork& net) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        auto& b = net.blocks[i];
        const std::string prefix = "block" + std::to_string(i) + ".";
        for (int s = 0; s < 3; ++s) {
            StreamParams& sp = b.stream(s);
            const std::string sp_prefix = prefix + stream_name(sp.variant) + ".";
            if (sp.variant != StreamKind::kRpfan)
                out.emplace_back(sp_prefix + "kernel", &sp.kernels[0].kernel);
            out.emplace_back(sp_prefix + "rani.local_conv", &sp.rani.local_conv);
            out.emplace_back(sp_prefix + "rani.ca_dense1", &sp.rani.ca_dense1);
            out.emplace_back(sp_prefix + "rani.ca_dense2", &sp.rani.ca_dense2);
            out.emplace_back(sp_prefix + "rani.sigma_g", &sp.rani.sigma_g);
            out.emplace_back(sp_prefix + "rani.sigma_l", &sp.rani.sigma_l);
        }
        out.emplace_back(prefix + "gate", &b.gate.logits);
        if (b.fusion_rani_params) {
            out.emplace_back(prefix + "fusion.local_conv", &b.fusion_rani_params->local_conv);
            out.emplace_back(prefix + "fusion.ca_dense1", &b.fusion_rani_params->ca_dense1);
            out.emplace_back(prefix + "fusion.ca_dense2", &b.fusion_rani_params->ca_dense2);
            out.emplace_back(prefix + "fusion.sigma_g", &b.fusion_rani_params->sigma_g);
            out.emplace_back(prefix + "fusion.sigma_l", &b.fusion_rani_params->sigma_l);
        }
    }
    out.emplace_back("head.weight", &net.head_weight);
    out.emplace_back("head.bias", &net.head_bias);
    for (int s = 0; s < 3; ++s) {
        out.emplace_back("aux" + std::to_string(s) + ".weight", &net.aux_weight[s]);
        out.emplace_back("aux" + std::to_string(s) + ".bias", &net.aux_bias[s]);
    }
    return out;
}

namespace detail {

inline KernelSpec init_rescaled_kernel(int kh, int cin, int cout, int h, int w, Rng& rng) {
    Tensor k({kh, kh, cin, cout});
    const double scale = 1.0 / std::sqrt(static_cast<double>(kh * kh * cin));
    for (auto& v : k.data) v = scale * rng.normal();
    KernelSpec spec(std::move(k));
    audit_kernel(spec, h, w);
    spec = rescale_kernel(spec);
    audit_kernel(spec, h, w);
    spec.kernel.with_grad();
    return spec;
}

inline Tensor init_dense(int rows, int cols, Rng& rng) {
    Tensor w({rows, cols});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : w.data) v = scale * rng.normal();
    w.with_grad();
    return w;
}

}  // namespace detail

inline HycasNetwork make_network(const NetworkConfig& config, std::uint64_t seed) {
    if (config.block_channels.empty()) throw std::invalid_argument("network needs at least one block");
    for (std::size_t i = 0; i + 1 < config.block_channels.size(); ++i)
        if (config.block_channels[i] % 2 != 0)
            throw std::invalid_argument("GroupSort between blocks requires even channel counts");

    HycasNetwork net;
    net.config = config;
    Rng rng(derive_seed(seed, 0x11e7u));
    int cin = config.input_c;
    for (std::size_t i = 0; i < config.block_channels.size(); ++i) {
        const int cout = config.block_channels[i];
        HycasBlock b;

        b.fdpan.variant = StreamKind::kFdpan;
        b.fdpan.kernels.push_back(
            detail::init_rescaled_kernel(config.kernel_size, cin, cout, config.input_h, config.input_w, rng));
        b.fdpan.mixer = make_orthogonal_mixer(cin, rng.next_u64());
        b.fdpan.mask = lowpass_mask(config.input_h, config.input_w, config.cutoff_rho);
        b.fdpan.rani = RaniParams::init(cout, rng);
        b.fdpan.rani.stages = config.rani_stages;
        b.fdpan.skip_beta = config.skip_beta;
        b.fdpan.rani_enabled = config.rani_enabled;

        b.sncan.variant = StreamKind::kSncan;
        b.sncan.kernels.push_back(
            detail::init_rescaled_kernel(config.kernel_size, cin, cout, config.input_h, config.input_w, rng));
        b.sncan.rani = RaniParams::init(cout, rng);
        b.sncan.rani.stages = config.rani_stages;
        b.sncan.rani_enabled = config.rani_enabled;

        b.rpfan.variant = StreamKind::kRpfan;
        b.rpfan.kernels.emplace_back(Tensor({config.rpfan_kernel_size, config.rpfan_kernel_size, cin, cout}));
        b.rpfan.mixer = make_orthogonal_mixer(cin, rng.next_u64());
        b.rpfan.rani = RaniParams::init(cout, rng);
        b.rpfan.rani.stages = config.rani_stages;
        b.rpfan.rani_enabled = config.rani_enabled;
        b.rpfan.rpfan_batch = config.rpfan_batch;

        b.gate = GateLogits::zeros(cout);
        b.fusion_rani = config.fusion_rani;
        if (config.fusion_rani) {
            b.fusion_rani_params = RaniParams::init(cout, rng);
            b.fusion_rani_params->stages = config.rani_stages;
        }
        net.blocks.push_back(std::move(b));
        cin = cout;
    }

    net.head_weight = detail::init_dense(config.classes, cin, rng);
    net.head_bias = Tensor({config.classes});
    net.head_bias.with_grad();
    for (int s = 0; s < 3; ++s) {
        net.aux_weight[s] = detail::init_dense(config.classes, cin, rng);
        net.aux_bias[s] = Tensor({config.classes});
        net.aux_bias[s].with_grad();
    }
    return net;
}

/// Drawn noise for a whole network forward.
struct NetworkNoise {
    std::vector<BlockNoise> blocks;
    Tensor epsilon;  // zeros when the NoiseState carries no input draw
};

/// Draws every stochastic quantity one forward consumes. When the config pins
/// the projections (rpfan_stochastic = false) the psi stream is replaced by a
/// fixed seed, making the network deterministic apart from RANI.
inline NetworkNoise draw_network_noise(const HycasNetwork& net, const NoiseState& noise) {
    NoiseState effective = noise;
    if (!net.config.rpfan_stochastic) effective.psi_seed = 0x0dde7e24u;

    NetworkNoise n;
    Shape in_shape{net.config.input_h, net.config.input_w, net.config.input_c};
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        n.blocks.push_back(draw_block_noise(net.blocks[i], in_shape, effective,
                                            static_cast<std::uint64_t>(i) + 1));
        in_shape[2] = net.blocks[i].out_channels();
    }
    if (noise.epsilon) {
        if (noise.epsilon->shape != Shape{net.config.input_h, net.config.input_w, net.config.input_c})
            throw std::invalid_argument("epsilon draw has the wrong shape");
        n.epsilon = *noise.epsilon;
    } else {
        n.epsilon = Tensor({net.config.input_h, net.config.input_w, net.config.input_c});
    }
    return n;
}

/// Tape leaves for the whole network.
struct NetworkLeaves {
    std::vector<BlockLeaves> blocks;
    Tape::Id head_weight = -1, head_bias = -1;
    std::array<Tape::Id, 3> aux_weight{-1, -1, -1}, aux_bias{-1, -1, -1};

    static NetworkLeaves constants(Tape& t, const HycasNetwork& n) {
        NetworkLeaves l;
        for (const auto& b : n.blocks) l.blocks.push_back(BlockLeaves::constants(t, b));
        l.head_weight = t.constant(n.head_weight);
        l.head_bias = t.constant(n.head_bias);
        for (int s = 0; s < 3; ++s) {
            l.aux_weight[s] = t.constant(n.aux_weight[s]);
            l.aux_bias[s] = t.constant(n.aux_bias[s]);
        }
        return l;
    }
    static NetworkLeaves params(Tape& t, HycasNetwork& n) {
        NetworkLeaves l;
        for (auto& b : n.blocks) l.blocks.push_back(BlockLeaves::params(t, b));
        l.head_weight = t.param(n.head_weight);
        l.head_bias = t.param(n.head_bias);
        for (int s = 0; s < 3; ++s) {
            l.aux_weight[s] = t.param(n.aux_weight[s]);
            l.aux_bias[s] = t.param(n.aux_bias[s]);
        }
        return l;
    }
};

/// A network forward recorded once and replayed per (input, NoiseState).
/// Refilling the noise slots and replaying is bit-identical to rebuilding the
/// graph from scratch, and two orders of magnitude cheaper than re-recording.
class NetworkEvaluator {
public:
    /// Inference evaluator: parameters enter as constants. `input_grad`
    /// additionally tracks gradients with respect to the input (attacks).
    static NetworkEvaluator inference(const HycasNetwork& net, bool input_grad = false) {
        return NetworkEvaluator(net, nullptr, input_grad);
    }

    /// Training evaluator: parameters enter as leaves; Tape::backward
    /// accumulates into each tensor's grad buffer.
    static NetworkEvaluator training(HycasNetwork& net) {
        return NetworkEvaluator(net, &net, false);
    }

    /// Heap-allocated inference evaluator (the tape pins its address, so the
    /// evaluator itself is neither copyable nor movable).
    static std::shared_ptr<NetworkEvaluator> shared_inference(const HycasNetwork& net,
                                                              bool input_grad = false) {
        return std::shared_ptr<NetworkEvaluator>(new NetworkEvaluator(net, nullptr, input_grad));
    }

    void set_input(const Tensor& x) { tape_.set_value(input_, x); }

    void set_noise(const NoiseState& noise) {
        NetworkNoise drawn = draw_network_noise(*net_, noise);
        tape_.set_value(epsilon_, drawn.epsilon);
        for (std::size_t i = 0; i < slots_.size(); ++i)
            slots_[i].refill(tape_, net_->blocks[i], drawn.blocks[i]);
        last_rq_.clear();
        for (const auto& b : drawn.blocks) last_rq_.push_back(b.streams[2].rpfan_rq);
        last_realized_.clear();
        for (auto& b : drawn.blocks) last_realized_.push_back(std::move(b.streams[2].realized_proj));
    }

    void run() { tape_.replay(); }

    const std::vector<double>& logits() const { return tape_.value(logits_).data; }
    const std::vector<double>& stream_logits(int b) const {
        return tape_.value(stream_logits_[b]).data;
    }

    /// set_input + set_noise + run, returning the logits.
    const std::vector<double>& eval(const Tensor& x, const NoiseState& noise) {
        set_input(x);
        set_noise(noise);
        run();
        return logits();
    }

    Tape& tape() { return tape_; }
    Tape::Id input_id() const { return input_; }
    Tape::Id logits_id() const { return logits_; }
    Tape::Id stream_logits_id(int b) const { return stream_logits_[b]; }

    /// Batch Rayleigh quotients / realized projections of the last set_noise.
    const std::vector<double>& last_rpfan_rq() const { return last_rq_; }
    const std::vector<KernelSpec>& last_realized_projections() const { return last_realized_; }

private:
    NetworkEvaluator(const HycasNetwork& net, HycasNetwork* trainable, bool input_grad)
        : net_(&net) {
        NetworkLeaves leaves = trainable ? NetworkLeaves::params(tape_, *trainable)
                                         : NetworkLeaves::constants(tape_, net);
        const Shape in_shape{net.config.input_h, net.config.input_w, net.config.input_c};
        input_ = input_grad ? tape_.input(Tensor(in_shape)) : tape_.constant(Tensor(in_shape));

        NetworkNoise initial = draw_network_noise(net, NoiseState{});
        epsilon_ = tape_.constant(initial.epsilon);
        Tape::Id cur = tape_.add(input_, epsilon_);
        for (std::size_t i = 0; i < net.blocks.size(); ++i) {
            slots_.push_back(BlockSlots::create(tape_, net.blocks[i], initial.blocks[i]));
            BlockGraph bg = block_forward_graph(tape_, cur, net.blocks[i], leaves.blocks[i], slots_[i]);
            const bool last = (i + 1 == net.blocks.size());
            if (last) {
                for (int s = 0; s < 3; ++s)
                    stream_logits_[s] = tape_.dense(tape_.gap(bg.stream_outputs[s]),
                                                    leaves.aux_weight[s], leaves.aux_bias[s]);
            }
            cur = last ? bg.output : tape_.groupsort2(bg.output);
        }
        logits_ = tape_.dense(tape_.gap(cur), leaves.head_weight, leaves.head_bias);
    }

    const HycasNetwork* net_;
    Tape tape_;
    std::vector<BlockSlots> slots_;
    Tape::Id input_ = -1, epsilon_ = -1, logits_ = -1;
    std::array<Tape::Id, 3> stream_logits_{-1, -1, -1};
    std::vector<double> last_rq_;
    std::vector<KernelSpec> last_realized_;
};

/// Logits of a single forward pass at the given NoiseState.
inline std::vector<double> network_logits(const HycasNetwork& net, const Tensor& x,
                                          const NoiseState& noise) {
    NetworkEvaluator ev = NetworkEvaluator::inference(net);
    return ev.eval(x, noise);
}

inline int network_predict(const HycasNetwork& net, const Tensor& x, const NoiseState& noise) {
    return argmax(network_logits(net, x, noise));
}

/// Largest singular value of the head weight matrix.
inline double head_spectral_norm(const HycasNetwork& net) {
    const int rows = net.head_weight.shape[0], cols = net.head_weight.shape[1];
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = net.head_weight.data[static_cast<std::size_t>(r) * cols + c];
    return m.bdcSvd().singularValues()(0);
}

/// Product of per-block bounds (2 each) times the exact head spectral norm.
/// Requires every owned kernel to carry a passing Fourier audit.
inline double network_lip_bound(const HycasNetwork& net) {
    for (std::size_t i = 0; i < net.blocks.size(); ++i)
        for (int s : {0, 1}) {  // fdpan, sncan own trained kernels
            const KernelSpec& k = net.blocks[i].stream(s).kernels.at(0);
            if (!k.fourier_audited || !k.sigma_hat)
                throw std::invalid_argument("unaudited kernel in block " + std::to_string(i));
            if (*k.sigma_hat > 1.0 + KernelSpec::kEpsilonGuard)
                throw std::invalid_argument("kernel in block " + std::to_string(i) +
                                            " fails the spectral audit");
        }
    double bound = head_spectral_norm(net);
    for (std::size_t i = 0; i < net.blocks.size(); ++i) bound *= 2.0;
    return bound;
}

/// Global calibrator: scales the head by gamma = min(1, 2 / L_net) so the
/// stacked network is at most 2-Lipschitz. Scaling the whole affine head
/// preserves the argmax.
inline void calibrate(HycasNetwork& net) {
    const double l_net = network_lip_bound(net);
    const double gamma = std::min(1.0, 2.0 / l_net);
    for (auto& v : net.head_weight.data) v *= gamma;
    for (auto& v : net.head_bias.data) v *= gamma;
    net.calibrator_gamma = gamma;
    net.lip_bound = l_net * gamma;
    net.calibrated = true;
}

}  // namespace hycas
