#include "bwq/tensor.hpp"
#include "bwq/common.hpp"

#include <cmath>
#include <stdexcept>

namespace bwq {

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(numel_of(shape), fill) {}

std::size_t Tensor::numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& what) const {
    if (!all_finite()) {
        throw std::runtime_error("non-finite values in " + what);
    }
}

double Rng::normal() {
    for (;;) {
        double u = uniform(-1.0, 1.0);
        double v = uniform(-1.0, 1.0);
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

} // namespace bwq
