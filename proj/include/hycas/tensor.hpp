#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hycas {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int extent : shape) {
        if (extent <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= static_cast<std::size_t>(extent);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

/// Dense N-dimensional array of doubles in row-major layout. Feature maps use
/// (H, W, C) order, convolution kernels (kh, kw, Cin, Cout). `grad`, when
/// present, is a same-shape accumulator written by Tape::backward.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }

    std::size_t size() const { return data.size(); }
    int extent(std::size_t dim) const { return shape.at(dim); }

    /// Marks the tensor as a trainable parameter: allocates a zeroed
    /// same-shape gradient accumulator.
    Tensor& with_grad() {
        grad.emplace(data.size(), 0.0);
        return *this;
    }
    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    }

    // (H, W, C) accessors.
    double& at3(int y, int x, int c) { return data[idx3(y, x, c)]; }
    double at3(int y, int x, int c) const { return data[idx3(y, x, c)]; }
    std::size_t idx3(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c;
    }

    // (kh, kw, Cin, Cout) accessors.
    double& at4(int p, int q, int ci, int co) { return data[idx4(p, q, ci, co)]; }
    double at4(int p, int q, int ci, int co) const { return data[idx4(p, q, ci, co)]; }
    std::size_t idx4(int p, int q, int ci, int co) const {
        return ((static_cast<std::size_t>(p) * shape[1] + q) * shape[2] + ci) * shape[3] + co;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }
inline double l2_norm(const Tensor& t) { return l2_norm(t.data); }

inline double l2_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double linf_distance(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

inline int argmax(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace hycas
