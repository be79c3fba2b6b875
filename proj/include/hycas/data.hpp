#pragma once

#include <string>
#include <vector>

#include "hycas/rng.hpp"
#include "hycas/tensor.hpp"

namespace hycas {

/// In-memory labelled image set, pixel values in [0,1].
struct Dataset {
    int h = 0, w = 0, c = 0;
    int num_classes = 0;
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    Shape image_shape() const { return {h, w, c}; }
};

namespace detail {

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

/// Two-class synthetic set: smooth low-frequency blobs (class 0) against
/// high-frequency zero-mean stripes (class 1) on a jittered background. The
/// blob carries a modest positive mean shift, so a pooled-feature classifier
/// separates cleanly but is attackable within a small l_inf budget, while the
/// stripe texture offers a robust spatial feature. Values are quantized
/// through float32 so files round-trip exactly.
inline Dataset make_blobstripe_dataset(int count, int hw, std::uint64_t seed) {
    Dataset ds;
    ds.h = hw;
    ds.w = hw;
    ds.c = 1;
    ds.num_classes = 2;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, i));
        const int label = static_cast<int>(rng.uniform_below(2));
        const double bg = rng.uniform(0.38, 0.42);
        Tensor img({hw, hw, 1});

        if (label == 0) {
            const double amp = rng.uniform(0.30, 0.40);
            const double cy = 0.5 * (hw - 1) + rng.uniform(-1.0, 1.0);
            const double cx = 0.5 * (hw - 1) + rng.uniform(-1.0, 1.0);
            const double s = rng.uniform(1.3, 1.9);
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x) {
                    double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    img.at3(y, x, 0) = amp * std::exp(-r2 / (2.0 * s * s));
                }
        } else {
            const double amp = rng.uniform(0.25, 0.35);
            const bool vertical = rng.uniform_below(2) == 0;
            const int phase = static_cast<int>(rng.uniform_below(2));
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x) {
                    int coord = vertical ? x : y;
                    img.at3(y, x, 0) = ((coord + phase) % 2 == 0) ? amp * 0.5 : -amp * 0.5;
                }
        }

        for (auto& v : img.data) {
            v += bg + 0.02 * rng.normal();
            v = std::min(1.0, std::max(0.0, v));
            v = detail::quantize_f32(v);
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

/// Uniform-noise images with uniform labels; format and plumbing tests.
inline Dataset make_random_dataset(int count, int hw, int channels, int classes,
                                   std::uint64_t seed) {
    Dataset ds;
    ds.h = hw;
    ds.w = hw;
    ds.c = channels;
    ds.num_classes = classes;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, i));
        Tensor img({hw, hw, channels});
        for (auto& v : img.data) v = detail::quantize_f32(rng.uniform());
        ds.images.push_back(std::move(img));
        ds.labels.push_back(static_cast<int>(rng.uniform_below(classes)));
    }
    return ds;
}

inline Dataset make_pattern_dataset(const std::string& pattern, int count, int hw, int classes,
                                    std::uint64_t seed) {
    if (pattern == "blobstripe") {
        if (classes != 2)
            throw std::invalid_argument("blobstripe pattern is a two-class generator");
        return make_blobstripe_dataset(count, hw, seed);
    }
    if (pattern == "random") return make_random_dataset(count, hw, 1, classes, seed);
    throw std::invalid_argument("unknown dataset pattern: " + pattern);
}

}  // namespace hycas
