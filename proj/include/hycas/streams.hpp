#pragma once

#include <optional>

#include "hycas/autodiff.hpp"
#include "hycas/rng.hpp"
#include "hycas/spectral.hpp"

namespace hycas {

/// Per-forward bundle of seeds: psi drives the random-projection draws, omega
/// the attention-noise masks, and epsilon optionally carries the input
/// Gaussian draw. Identical NoiseStates give bit-identical stream outputs for
/// identical inputs and parameters.
struct NoiseState {
    std::uint64_t psi_seed = 0;
    std::uint64_t omega_seed = 0;
    std::optional<Tensor> epsilon;
};

/// Counter-based noise stream: sample i of a job derives its NoiseState from
/// (job_seed, i), so parallel and serial execution certify identically.
inline NoiseState noise_state_for(std::uint64_t job_seed, std::uint64_t index) {
    return NoiseState{derive_seed(job_seed, 2 * index), derive_seed(job_seed, 2 * index + 1),
                      std::nullopt};
}

/// Trainable parameters of the randomized attention-noise generator: a 1x1
/// convolution for the local attention, two dense layers for the channel
/// attention, and per-channel noise scales for the two-step self-modulation.
struct RaniParams {
    Tensor local_conv;  // (1,1,C,C)
    Tensor ca_dense1;   // (C,C)
    Tensor ca_dense2;   // (C,C)
    Tensor sigma_g;     // (C)
    Tensor sigma_l;     // (C)
    int stages = 4;

    static RaniParams init(int c, Rng& rng) {
        RaniParams p;
        const double scale = 1.0 / std::sqrt(static_cast<double>(c));
        p.local_conv = Tensor({1, 1, c, c});
        for (auto& v : p.local_conv.data) v = scale * rng.normal();
        p.ca_dense1 = Tensor({c, c});
        for (auto& v : p.ca_dense1.data) v = scale * rng.normal();
        p.ca_dense2 = Tensor({c, c});
        for (auto& v : p.ca_dense2.data) v = scale * rng.normal();
        p.sigma_g = Tensor::full({c}, 0.5);
        p.sigma_l = Tensor::full({c}, 0.5);
        p.local_conv.with_grad();
        p.ca_dense1.with_grad();
        p.ca_dense2.with_grad();
        p.sigma_g.with_grad();
        p.sigma_l.with_grad();
        return p;
    }

    int channels() const { return sigma_g.shape[0]; }
};

/// Tape ids of one RANI parameter set.
struct RaniLeaves {
    Tape::Id local_conv, ca_dense1, ca_dense2, sigma_g, sigma_l;

    static RaniLeaves constants(Tape& t, const RaniParams& p) {
        return {t.constant(p.local_conv), t.constant(p.ca_dense1), t.constant(p.ca_dense2),
                t.constant(p.sigma_g), t.constant(p.sigma_l)};
    }
    static RaniLeaves params(Tape& t, RaniParams& p) {
        return {t.param(p.local_conv), t.param(p.ca_dense1), t.param(p.ca_dense2),
                t.param(p.sigma_g), t.param(p.sigma_l)};
    }
};

/// The drawn stochastic inputs of one mask: the Gaussian surrogate the
/// attentions see (never the live features) and the per-stage layer noises.
struct RaniNoise {
    Tensor surrogate;            // (H,W,C)
    std::vector<Tensor> eta_g;   // stages x (C)
    std::vector<Tensor> eta_l;   // stages x (C)
};

inline RaniNoise draw_rani_noise(int h, int w, int c, int stages, std::uint64_t omega_sub) {
    RaniNoise n;
    n.surrogate = Tensor({h, w, c});
    {
        Rng rng(derive_seed(omega_sub, 0));
        for (auto& v : n.surrogate.data) v = rng.normal();
    }
    n.eta_g.reserve(stages);
    n.eta_l.reserve(stages);
    for (int j = 0; j < stages; ++j) {
        Tensor eg({c}), el({c});
        {
            Rng rng(derive_seed(omega_sub, 1 + 2 * static_cast<std::uint64_t>(j)));
            for (auto& v : eg.data) v = rng.normal();
        }
        {
            Rng rng(derive_seed(omega_sub, 2 + 2 * static_cast<std::uint64_t>(j)));
            for (auto& v : el.data) v = rng.normal();
        }
        n.eta_g.push_back(std::move(eg));
        n.eta_l.push_back(std::move(el));
    }
    return n;
}

/// Refillable tape slots for the mask noise, so one recorded graph serves
/// many NoiseStates via replay.
struct RaniSlots {
    Tape::Id surrogate = -1;
    std::vector<Tape::Id> eta_g, eta_l;

    static RaniSlots create(Tape& t, const RaniNoise& initial) {
        RaniSlots s;
        s.surrogate = t.constant(initial.surrogate);
        for (const auto& e : initial.eta_g) s.eta_g.push_back(t.constant(e));
        for (const auto& e : initial.eta_l) s.eta_l.push_back(t.constant(e));
        return s;
    }
    void refill(Tape& t, const RaniNoise& n) const {
        t.set_value(surrogate, n.surrogate);
        for (std::size_t j = 0; j < eta_g.size(); ++j) {
            t.set_value(eta_g[j], n.eta_g[j]);
            t.set_value(eta_l[j], n.eta_l[j]);
        }
    }
};

/// Records the attention-noise mask M_omega. Per stage: LA = sigmoid(1x1
/// conv), CA = sigmoid(dense(relu(dense(gap)))) computed on the surrogate,
/// layer noises run the two-step self-modulation eta <- eta*(sigma+eta*sigma),
/// the noised maps are clipped to [0,1] and the stage maps multiply up.
/// Entries end in [0,1]; gradients flow into the RANI parameters only.
inline Tape::Id rani_mask_graph(Tape& tape, const RaniLeaves& leaves, const RaniSlots& slots) {
    const Shape& zs = tape.value(slots.surrogate).shape;
    const int h = zs[0], w = zs[1], c = zs[2];

    Tape::Id z = slots.surrogate;
    Tape::Id local = tape.sigmoid(tape.conv2d(z, leaves.local_conv, Padding::kCircular));
    Tape::Id zero_bias = tape.constant(Tensor({c}));
    Tape::Id ca = tape.sigmoid(tape.dense(
        tape.relu(tape.dense(tape.gap(z), leaves.ca_dense1, zero_bias)), leaves.ca_dense2, zero_bias));

    auto modulated = [&](Tape::Id eta, Tape::Id sigma) {
        for (int step = 0; step < 2; ++step)
            eta = tape.hadamard(eta, tape.add(sigma, tape.hadamard(eta, sigma)));
        return eta;
    };

    Tape::Id mask = -1;
    for (std::size_t stage = 0; stage < slots.eta_g.size(); ++stage) {
        Tape::Id eta_g = modulated(slots.eta_g[stage], leaves.sigma_g);
        Tape::Id eta_l = modulated(slots.eta_l[stage], leaves.sigma_l);
        Tape::Id gamma_g = tape.clip01(tape.add(eta_g, ca));
        Tape::Id gamma_l = tape.clip01(tape.add(tape.expand_channels(eta_l, h, w), local));
        Tape::Id stage_map = tape.hadamard(tape.expand_channels(gamma_g, h, w), gamma_l);
        mask = (stage == 0) ? stage_map : tape.hadamard(mask, stage_map);
    }
    return mask;
}

/// Pure mask generator (one-shot tape). Entries always lie in [0,1].
inline Tensor rani_mask(const Shape& hwc, const RaniParams& params, std::uint64_t omega_seed) {
    if (hwc.size() != 3) throw std::invalid_argument("rani_mask expects an (H,W,C) shape");
    if (params.channels() != hwc[2])
        throw std::invalid_argument("rani params built for " + std::to_string(params.channels()) +
                                    " channels, mask wants " + std::to_string(hwc[2]));
    Tape tape;
    auto leaves = RaniLeaves::constants(tape, params);
    auto slots = RaniSlots::create(
        tape, draw_rani_noise(hwc[0], hwc[1], hwc[2], params.stages, omega_seed));
    return tape.value(rani_mask_graph(tape, leaves, slots));
}

/// Residual application (I + diag(M)) h — the form every Lipschitz bound is
/// proved for. 2-Lipschitz in h for any fixed mask in [0,1].
inline Tensor rani_apply(const Tensor& h, const Tensor& mask) {
    if (!same_shape(h, mask))
        throw std::invalid_argument("rani_apply shape mismatch: " + shape_str(h.shape) + " vs " +
                                    shape_str(mask.shape));
    Tensor out(h.shape);
    for (std::size_t i = 0; i < h.data.size(); ++i) out.data[i] = h.data[i] * (1.0 + mask.data[i]);
    return out;
}

enum class StreamKind { kFdpan, kSncan, kRpfan };

inline const char* stream_name(StreamKind kind) {
    switch (kind) {
        case StreamKind::kFdpan: return "fdpan";
        case StreamKind::kSncan: return "sncan";
        case StreamKind::kRpfan: return "rpfan";
    }
    return "?";
}

/// One stream's parameter set. SNCAN and FDPAN own a trained, spectrally
/// rescaled kernel in kernels[0]; RPFAN's kernels[0] is a shape/padding
/// template whose weights are redrawn from psi on every forward. The mixer is
/// frozen orthogonal, the DCT mask binary low-pass.
struct StreamParams {
    StreamKind variant = StreamKind::kSncan;
    std::vector<KernelSpec> kernels;
    std::optional<OrthoMixer> mixer;  // FDPAN, RPFAN
    std::optional<DctMask> mask;      // FDPAN
    RaniParams rani;
    double skip_beta = 1.0;  // FDPAN only
    bool rani_enabled = true;
    int rpfan_batch = 2;  // N used by batch-aware spectral normalisation

    int out_channels() const { return kernels.at(0).out_channels(); }
    int in_channels() const { return kernels.at(0).in_channels(); }
};

/// Leaves for a stream's trainable tensors. RPFAN has no trainable kernel.
struct StreamLeaves {
    Tape::Id kernel = -1;
    RaniLeaves rani;

    static StreamLeaves constants(Tape& t, const StreamParams& p) {
        StreamLeaves l{-1, RaniLeaves::constants(t, p.rani)};
        if (p.variant != StreamKind::kRpfan) l.kernel = t.constant(p.kernels.at(0).kernel);
        return l;
    }
    static StreamLeaves params(Tape& t, StreamParams& p) {
        StreamLeaves l{-1, RaniLeaves::params(t, p.rani)};
        if (p.variant != StreamKind::kRpfan) l.kernel = t.param(p.kernels.at(0).kernel);
        return l;
    }
};

namespace detail {

inline void require_rescaled(const KernelSpec& k, const char* who) {
    if (!k.sigma_hat || *k.sigma_hat > 1.0 + KernelSpec::kEpsilonGuard)
        throw std::invalid_argument(std::string(who) +
                                    " requires a spectrally rescaled kernel (operator norm <= 1)");
}

/// Draws the random-projection filter exactly as the stream does: seeded
/// standard Gaussians, fan-in scaled by 1/sqrt(kh*kw*Cin).
inline KernelSpec draw_projection(const KernelSpec& tmpl, std::uint64_t psi_seed) {
    KernelSpec w0 = tmpl;
    Rng rng(derive_seed(psi_seed, 0x9251u));
    const double scale =
        1.0 / std::sqrt(static_cast<double>(tmpl.kernel.shape[0] * tmpl.kernel.shape[1] *
                                            tmpl.kernel.shape[2]));
    for (auto& v : w0.kernel.data) v = scale * rng.normal();
    w0.sigma_hat = std::nullopt;
    w0.fourier_audited = false;
    return w0;
}

}  // namespace detail

/// Drawn noise of one stream forward: the mask inputs plus, for RPFAN, the
/// realized spectrally normalized projection.
struct StreamNoise {
    RaniNoise rani;
    KernelSpec realized_proj;  // RPFAN only
    double rpfan_rq = 0.0;
};

inline Shape stream_output_shape(const StreamParams& p, const Shape& in_shape) {
    return detail::conv_output_shape(in_shape, p.kernels.at(0).kernel.shape,
                                     p.kernels.at(0).padding, p.kernels.at(0).stride);
}

/// Draws everything stochastic a stream consumes for one NoiseState. `tag`
/// separates the sub-streams when several streams/blocks share a NoiseState.
inline StreamNoise draw_stream_noise(const StreamParams& params, const Shape& in_shape,
                                     const NoiseState& noise, std::uint64_t tag) {
    const std::uint64_t omega_sub = derive_seed(noise.omega_seed, tag);
    const std::uint64_t psi_sub = derive_seed(noise.psi_seed, tag);
    StreamNoise n;
    const Shape out_shape = stream_output_shape(params, in_shape);
    if (params.rani_enabled)
        n.rani = draw_rani_noise(out_shape[0], out_shape[1], out_shape[2], params.rani.stages, omega_sub);
    if (params.variant == StreamKind::kRpfan) {
        KernelSpec w0 = detail::draw_projection(params.kernels.at(0), psi_sub);
        auto sn = batch_aware_spectral_norm(w0, params.rpfan_batch, in_shape[0], in_shape[1],
                                            derive_seed(psi_sub, 0x51u));
        n.realized_proj = std::move(sn.normalized);
        n.rpfan_rq = sn.rayleigh_quotient;
    }
    return n;
}

struct StreamSlots {
    RaniSlots rani;
    Tape::Id proj = -1;  // RPFAN realized kernel

    static StreamSlots create(Tape& t, const StreamParams& p, const StreamNoise& initial) {
        StreamSlots s;
        if (p.rani_enabled) s.rani = RaniSlots::create(t, initial.rani);
        if (p.variant == StreamKind::kRpfan) s.proj = t.constant(initial.realized_proj.kernel);
        return s;
    }
    void refill(Tape& t, const StreamParams& p, const StreamNoise& n) const {
        if (p.rani_enabled) rani.refill(t, n.rani);
        if (p.variant == StreamKind::kRpfan) t.set_value(proj, n.realized_proj.kernel);
    }
};

struct StreamGraph {
    Tape::Id output = -1;
    Tape::Id mask = -1;  // -1 when RANI is disabled
};

/// Records one stream forward on the tape against pre-created noise slots.
inline StreamGraph stream_forward_graph(Tape& tape, Tape::Id x, const StreamParams& params,
                                        const StreamLeaves& leaves, const StreamSlots& slots) {
    const Shape& in_shape = tape.value(x).shape;
    if (in_shape.size() != 3)
        throw std::invalid_argument("stream input must be (H,W,C), got " + shape_str(in_shape));
    const int h = in_shape[0], w = in_shape[1];

    StreamGraph result;
    Tape::Id core = -1;

    switch (params.variant) {
        case StreamKind::kSncan: {
            detail::require_rescaled(params.kernels.at(0), "sncan_forward");
            core = tape.conv2d(x, leaves.kernel, params.kernels[0].padding, params.kernels[0].stride);
            break;
        }
        case StreamKind::kRpfan: {
            if (!params.mixer) throw std::invalid_argument("rpfan requires an orthogonal mixer");
            Tape::Id mixed =
                tape.conv2d(x, tape.constant(params.mixer->as_conv_kernel()), Padding::kCircular);
            core = tape.conv2d(mixed, slots.proj, params.kernels[0].padding, params.kernels[0].stride);
            break;
        }
        case StreamKind::kFdpan: {
            detail::require_rescaled(params.kernels.at(0), "fdpan_forward");
            if (!params.mixer || !params.mask)
                throw std::invalid_argument("fdpan requires a mixer and a DCT mask");
            const int cin = in_shape[2];
            Tensor mask3({h, w, cin});
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    for (int c = 0; c < cin; ++c)
                        mask3.at3(y, xx, c) =
                            params.mask->mask.data[static_cast<std::size_t>(y) * w + xx];
            Tape::Id coeffs = tape.dct2(x);
            Tape::Id kept = tape.hadamard(coeffs, tape.constant(std::move(mask3)));
            Tape::Id spatial = tape.idct2(kept);
            Tape::Id mixed = tape.conv2d(spatial, tape.constant(params.mixer->as_conv_kernel()),
                                         Padding::kCircular);
            core = tape.conv2d(mixed, leaves.kernel, params.kernels[0].padding, params.kernels[0].stride);
            break;
        }
    }

    const double beta = (params.variant == StreamKind::kFdpan) ? params.skip_beta : 1.0;
    Tape::Id skip = (beta == 1.0) ? core : tape.scale(core, beta);
    if (!params.rani_enabled) {
        result.output = skip;
        return result;
    }
    result.mask = rani_mask_graph(tape, leaves.rani, slots.rani);
    result.output = tape.add(skip, tape.hadamard(result.mask, core));
    return result;
}

namespace detail {

inline Tensor stream_forward_pure(const StreamParams& params, const Tensor& x,
                                  const NoiseState& noise) {
    Tape tape;
    const std::uint64_t tag = static_cast<std::uint64_t>(params.variant);
    StreamNoise drawn = draw_stream_noise(params, x.shape, noise, tag);
    auto leaves = StreamLeaves::constants(tape, params);
    auto slots = StreamSlots::create(tape, params, drawn);
    return tape.value(stream_forward_graph(tape, tape.constant(x), params, leaves, slots).output);
}

}  // namespace detail

/// G = (I + D_omega) C_K(x): spectrally normalized convolution with the
/// attention-noise residual.
inline Tensor sncan_forward(const Tensor& x, const StreamParams& params, const NoiseState& noise) {
    if (params.variant != StreamKind::kSncan) throw std::invalid_argument("params.variant != SNCAN");
    return detail::stream_forward_pure(params, x, noise);
}

/// G = (I + D_omega) Conv(Ux; W_SN): orthogonal pre-mix, freshly drawn and
/// batch-normalized random projection, attention-noise residual.
inline Tensor rpfan_forward(const Tensor& x, const StreamParams& params, const NoiseState& noise) {
    if (params.variant != StreamKind::kRpfan) throw std::invalid_argument("params.variant != RPFAN");
    return detail::stream_forward_pure(params, x, noise);
}

/// G = beta H(x) + D_omega H(x) with the deterministic core
/// H = C_K . U . IDCT . mask . DCT.
inline Tensor fdpan_forward(const Tensor& x, const StreamParams& params, const NoiseState& noise) {
    if (params.variant != StreamKind::kFdpan) throw std::invalid_argument("params.variant != FDPAN");
    return detail::stream_forward_pure(params, x, noise);
}

inline Tensor stream_forward(const Tensor& x, const StreamParams& params, const NoiseState& noise) {
    return detail::stream_forward_pure(params, x, noise);
}

/// Fraction of point pairs whose projected squared distance (before spectral
/// rescaling, energy-corrected by Cin/Cout) lands inside the
/// (1 +- epsilon_jl) distance-preservation band, averaged over `draws`
/// independent projection draws.
inline double rpfan_jl_check(const StreamParams& params, const std::vector<Tensor>& points,
                             double epsilon_jl, std::uint64_t seed = 1, int draws = 32) {
    if (params.variant != StreamKind::kRpfan) throw std::invalid_argument("params.variant != RPFAN");
    if (points.size() < 2) throw std::invalid_argument("jl check needs at least two points");
    const double energy = static_cast<double>(params.in_channels()) / params.out_channels();

    std::size_t in_band = 0, total = 0;
    for (int d = 0; d < draws; ++d) {
        KernelSpec w0 = detail::draw_projection(params.kernels.at(0), derive_seed(seed, d));
        std::vector<Tensor> projected;
        projected.reserve(points.size());
        for (const auto& p : points) projected.push_back(conv_apply(w0, p));
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (std::size_t j = i + 1; j < points.size(); ++j) {
                double dx = l2_distance(points[i], points[j]);
                double dz = l2_distance(projected[i], projected[j]);
                double lhs = energy * dz * dz;
                double ref = dx * dx;
                if (lhs >= (1.0 - epsilon_jl) * ref && lhs <= (1.0 + epsilon_jl) * ref) ++in_band;
                ++total;
            }
        }
    }
    return static_cast<double>(in_band) / static_cast<double>(total);
}

}  // namespace hycas
