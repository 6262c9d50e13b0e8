#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bwq {

// Dense row-major tensor of doubles. Training arithmetic stays in 64-bit
// floats so numerical gradient checks are not polluted by precision noise.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }
    static std::size_t numel_of(const std::vector<std::size_t>& s);

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const;
    // Throws std::runtime_error naming `what` if any element is NaN/Inf.
    void require_finite(const std::string& what) const;
};

} // namespace bwq
