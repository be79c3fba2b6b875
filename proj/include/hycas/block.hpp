#pragma once

#include <array>
#include <string>
#include <utility>

#include "hycas/streams.hpp"

namespace hycas {

/// Per-channel gate logits, |B| x C with B = {FDPAN, SNCAN, RPFAN} in rows
/// 0..2. The convex weights are a per-channel softmax over the stream axis.
struct GateLogits {
    Tensor logits;  // (3, C)

    static GateLogits zeros(int c) {
        GateLogits g;
        g.logits = Tensor({3, c});
        g.logits.with_grad();
        return g;
    }
    int channels() const { return logits.shape[1]; }
};

/// Softmax over the stream axis for every channel: columns sum to one and
/// every weight is non-negative.
inline Tensor gate_weights(const GateLogits& gate) {
    Tape tape;
    return tape.value(tape.colwise_softmax(tape.constant(gate.logits)));
}

/// One HyCAS block: three streams fused by the convex channel gate, plus an
/// optional fused attention-noise residual. The fused residual composed with
/// 2-Lipschitz streams would naively bound the block by 4, so when it is
/// enabled the block output is halved to restore the <= 2 envelope; it stays
/// off by default.
struct HycasBlock {
    StreamParams fdpan, sncan, rpfan;
    GateLogits gate;
    bool fusion_rani = false;
    std::optional<RaniParams> fusion_rani_params;

    StreamParams& stream(int b) { return b == 0 ? fdpan : (b == 1 ? sncan : rpfan); }
    const StreamParams& stream(int b) const { return b == 0 ? fdpan : (b == 1 ? sncan : rpfan); }
    int out_channels() const { return sncan.out_channels(); }
};

struct BlockLeaves {
    std::array<StreamLeaves, 3> streams;
    Tape::Id gate = -1;
    std::optional<RaniLeaves> fusion_rani;

    static BlockLeaves constants(Tape& t, const HycasBlock& b) {
        BlockLeaves l;
        for (int s = 0; s < 3; ++s) l.streams[s] = StreamLeaves::constants(t, b.stream(s));
        l.gate = t.constant(b.gate.logits);
        if (b.fusion_rani && b.fusion_rani_params)
            l.fusion_rani = RaniLeaves::constants(t, *b.fusion_rani_params);
        return l;
    }
    static BlockLeaves params(Tape& t, HycasBlock& b) {
        BlockLeaves l;
        for (int s = 0; s < 3; ++s) l.streams[s] = StreamLeaves::params(t, b.stream(s));
        l.gate = t.param(b.gate.logits);
        if (b.fusion_rani && b.fusion_rani_params)
            l.fusion_rani = RaniLeaves::params(t, *b.fusion_rani_params);
        return l;
    }
};

/// Drawn noise of one block forward.
struct BlockNoise {
    std::array<StreamNoise, 3> streams;
    std::optional<RaniNoise> fusion;
};

inline BlockNoise draw_block_noise(const HycasBlock& block, const Shape& in_shape,
                                   const NoiseState& noise, std::uint64_t block_tag) {
    BlockNoise n;
    for (int b = 0; b < 3; ++b)
        n.streams[b] = draw_stream_noise(block.stream(b), in_shape, noise,
                                         block_tag * 8 + static_cast<std::uint64_t>(b));
    if (block.fusion_rani && block.fusion_rani_params) {
        const Shape out = stream_output_shape(block.sncan, in_shape);
        n.fusion = draw_rani_noise(out[0], out[1], out[2], block.fusion_rani_params->stages,
                                   derive_seed(noise.omega_seed, block_tag * 8 + 3));
    }
    return n;
}

struct BlockSlots {
    std::array<StreamSlots, 3> streams;
    std::optional<RaniSlots> fusion;

    static BlockSlots create(Tape& t, const HycasBlock& b, const BlockNoise& initial) {
        BlockSlots s;
        for (int i = 0; i < 3; ++i) s.streams[i] = StreamSlots::create(t, b.stream(i), initial.streams[i]);
        if (initial.fusion) s.fusion = RaniSlots::create(t, *initial.fusion);
        return s;
    }
    void refill(Tape& t, const HycasBlock& b, const BlockNoise& n) const {
        for (int i = 0; i < 3; ++i) streams[i].refill(t, b.stream(i), n.streams[i]);
        if (fusion && n.fusion) fusion->refill(t, *n.fusion);
    }
};

struct BlockGraph {
    Tape::Id output = -1;
    std::array<Tape::Id, 3> stream_outputs{-1, -1, -1};
};

/// Convex fusion of arbitrary per-stream outputs:
/// z[...,c] = sum_b alpha[b,c] * g_b[...,c]. Exposed separately so audits can
/// fuse synthetic maps of known Lipschitz constants.
inline Tensor fuse_streams(const Tensor& alpha, const std::array<Tensor, 3>& outputs) {
    const Tensor& first = outputs[0];
    for (const auto& o : outputs)
        if (!same_shape(o, first)) throw std::invalid_argument("stream output shapes differ");
    const int c = first.shape.back();
    if (alpha.shape != Shape{3, c})
        throw std::invalid_argument("gate weights must be (3," + std::to_string(c) + ")");
    Tensor z(first.shape);
    const std::size_t positions = first.size() / c;
    for (std::size_t i = 0; i < positions; ++i)
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int b = 0; b < 3; ++b)
                s += alpha.data[static_cast<std::size_t>(b) * c + ch] * outputs[b].data[i * c + ch];
            z.data[i * c + ch] = s;
        }
    return z;
}

/// Records one block forward: the three streams, the per-channel convex
/// fusion, and (optionally) the fused attention-noise residual with its 1/2
/// post-scale.
inline BlockGraph block_forward_graph(Tape& tape, Tape::Id x, const HycasBlock& block,
                                      const BlockLeaves& leaves, const BlockSlots& slots) {
    BlockGraph result;
    const int h = tape.value(x).shape[0], w = tape.value(x).shape[1];

    Tape::Id alpha = tape.colwise_softmax(leaves.gate);
    Tape::Id fused = -1;
    for (int b = 0; b < 3; ++b) {
        StreamGraph sg = stream_forward_graph(tape, x, block.stream(b), leaves.streams[b], slots.streams[b]);
        result.stream_outputs[b] = sg.output;
        Tape::Id weighted =
            tape.hadamard(tape.expand_channels(tape.slice_row(alpha, b), h, w), sg.output);
        fused = (b == 0) ? weighted : tape.add(fused, weighted);
    }

    if (block.fusion_rani && leaves.fusion_rani && slots.fusion) {
        Tape::Id mask = rani_mask_graph(tape, *leaves.fusion_rani, *slots.fusion);
        fused = tape.scale(tape.add(fused, tape.hadamard(mask, fused)), 0.5);
    }
    result.output = fused;
    return result;
}

/// Pure single-block forward, mostly for audits and tests.
inline Tensor block_forward(const Tensor& x, const HycasBlock& block, const NoiseState& noise,
                            std::uint64_t block_tag = 0) {
    Tape tape;
    BlockNoise drawn = draw_block_noise(block, x.shape, noise, block_tag);
    auto leaves = BlockLeaves::constants(tape, block);
    auto slots = BlockSlots::create(tape, block, drawn);
    return tape.value(block_forward_graph(tape, tape.constant(x), block, leaves, slots).output);
}

}  // namespace hycas
