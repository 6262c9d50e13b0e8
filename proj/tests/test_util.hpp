#pragma once

// Shared test fixtures and independent oracles. Everything here computes
// expected values without going through the implementation path under test.

#include "bwq/common.hpp"
#include "bwq/nn.hpp"
#include "bwq/quant.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace bwq::testutil {

// --- independent oracles -------------------------------------------------

// naive triple loop, the matrix-arithmetic oracle for the GEMM kernels
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

// central finite difference of an arbitrary scalar function at *param
inline double finite_diff(const std::function<double()>& loss, double* param,
                          double h = 1e-5) {
    const double saved = *param;
    *param = saved + h;
    const double up = loss();
    *param = saved - h;
    const double down = loss();
    *param = saved;
    return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double m = std::max(std::fabs(a), std::fabs(b));
    if (m < 1e-10) return 0.0;
    return std::fabs(a - b) / m;
}

// --- random quantized layers ----------------------------------------------

// Random continuous BitLayer (planes in [0,1], random signs, all masks on).
inline quant::BitLayer random_bitlayer(Rng& rng, std::size_t rows, std::size_t cols,
                                       int n, std::size_t ou_h, std::size_t ou_w) {
    Tensor w = Tensor::matrix(rows, cols);
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    quant::BitLayer l = quant::BitLayer::from_real(w, n, ou_h, ou_w);
    for (int b = 0; b < n; ++b) {
        for (double& v : l.bit_planes[static_cast<std::size_t>(b)].data) {
            v = rng.uniform();
        }
    }
    return l;
}

// Random binary model layer with mixed block bitwidths in [0, n], canonical
// (masks consistent with the plane zero patterns).
inline quant::BitLayer random_binary_bitlayer(Rng& rng, std::size_t rows, std::size_t cols,
                                              int n, std::size_t ou_h, std::size_t ou_w) {
    quant::BitLayer l;
    l.rows = rows;
    l.cols = cols;
    l.n = n;
    l.scale = rng.uniform(0.5, 4.0);
    l.wb_grid = quant::partition(rows, cols, ou_h, ou_w, n);
    l.sign = Tensor::matrix(rows, cols, 1.0);
    for (double& v : l.sign.data) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    l.bit_planes.assign(static_cast<std::size_t>(n), Tensor::matrix(rows, cols));
    auto& g = l.wb_grid;
    for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
            const int bw = rng.int_in(0, n);
            for (int b = 0; b < n; ++b) {
                if (b >= bw) continue;
                for (std::size_t i = g.row_begin(vb); i < g.row_end(vb); ++i) {
                    for (std::size_t j = g.col_begin(hb); j < g.col_end(hb); ++j) {
                        l.bit_planes[static_cast<std::size_t>(b)].at(i, j) =
                            rng.uniform() < 0.5 ? 1.0 : 0.0;
                    }
                }
            }
        }
    }
    // canonicalize masks/bitwidths against whatever zeros the RNG produced,
    // and pin the sign of zero-magnitude cells to +1 as requantize would
    quant::adjust_precision(l);
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t vb = i / ou_h;
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t hb = j / ou_w;
            bool any = false;
            for (int b = 0; b < n && !any; ++b) {
                any = g.mask(vb, hb, b) != 0 &&
                      l.bit_planes[static_cast<std::size_t>(b)].at(i, j) == 1.0;
            }
            if (!any) l.sign.at(i, j) = 1.0;
        }
    }
    return l;
}

// Random small quantized model (already re-quantized, binary planes).
inline nn::Model random_binary_model(Rng& rng, bool conv, std::size_t ou_h = 9,
                                     std::size_t ou_w = 8) {
    nn::Model m;
    m.input_beta = 2.0;
    if (conv) {
        nn::Layer l1;
        l1.kind = nn::LayerKind::Conv;
        l1.name = "conv1";
        l1.c_in = 1;
        l1.c_out = 1 + rng.index(4);
        l1.k = 3;
        l1.in_h = l1.in_w = 6;
        l1.weights = random_binary_bitlayer(rng, 9, l1.c_out, 8, ou_h, ou_w);
        l1.bias = Tensor({l1.c_out});
        for (double& v : l1.bias.data) v = rng.uniform(-0.2, 0.2);
        nn::Layer l2;
        l2.kind = nn::LayerKind::Dense;
        l2.name = "fc1";
        l2.c_in = l1.c_out * 16;
        l2.c_out = 2 + rng.index(3);
        l2.weights = random_binary_bitlayer(rng, l2.c_in, l2.c_out, 8, ou_h, ou_w);
        l2.bias = Tensor({l2.c_out});
        for (double& v : l2.bias.data) v = rng.uniform(-0.2, 0.2);
        m.layers = {l1, l2};
    } else {
        const std::size_t d_in = 2 + rng.index(12);
        const std::size_t hidden = 3 + rng.index(14);
        const std::size_t d_out = 2 + rng.index(4);
        nn::Layer l1;
        l1.kind = nn::LayerKind::Dense;
        l1.name = "fc1";
        l1.c_in = d_in;
        l1.c_out = hidden;
        l1.weights = random_binary_bitlayer(rng, d_in, hidden, 8, ou_h, ou_w);
        l1.bias = Tensor({hidden});
        for (double& v : l1.bias.data) v = rng.uniform(-0.2, 0.2);
        nn::Layer l2;
        l2.kind = nn::LayerKind::Dense;
        l2.name = "fc2";
        l2.c_in = hidden;
        l2.c_out = d_out;
        l2.weights = random_binary_bitlayer(rng, hidden, d_out, 8, ou_h, ou_w);
        l2.bias = Tensor({d_out});
        for (double& v : l2.bias.data) v = rng.uniform(-0.2, 0.2);
        m.layers = {l1, l2};
    }
    const int act_bits = 1 + static_cast<int>(rng.index(8));
    for (auto& l : m.layers) {
        l.act.beta = rng.uniform(1.0, 3.0);
        l.act.act_bits = act_bits;
    }
    return m;
}

// Re-seeds every bit plane with interior values so finite-difference probes
// have room to move (bit decomposition leaves planes exactly binary).
inline void soften_planes(nn::Model& m, Rng& rng) {
    for (auto& l : m.layers) {
        for (auto& plane : l.weights.bit_planes) {
            for (double& v : plane.data) v = rng.uniform(0.05, 0.95);
        }
        l.weights.clamp_planes();
    }
}

inline Tensor random_inputs(Rng& rng, std::size_t n, std::size_t width, double hi) {
    Tensor t = Tensor::matrix(n, width);
    for (double& v : t.data) v = rng.uniform(0.0, hi);
    return t;
}

// --- the two-stacked-blocks fixture ----------------------------------------
//
// One layer of two vertically stacked 2x2 weight blocks with bitwidths 2 and
// 1 on a 4x4 crossbar of 2x2 OUs; with 2-bit activations it schedules in 6
// cycles and leaves one spare OU.
inline nn::Model two_block_fixture() {
    nn::Model m;
    m.input_beta = 3.0;
    nn::Layer l;
    l.kind = nn::LayerKind::Dense;
    l.name = "fc1";
    l.c_in = 4;
    l.c_out = 2;
    l.act.act_bits = 2;
    l.act.beta = 3.0;

    quant::BitLayer w;
    w.rows = 4;
    w.cols = 2;
    w.n = 2;
    w.scale = 3.0;   // level step (2^2-1 = 3 levels) of exactly 1
    w.wb_grid = quant::partition(4, 2, 2, 2, 2);
    w.sign = Tensor::matrix(4, 2, 1.0);
    w.sign.at(3, 0) = -1.0;
    w.bit_planes.assign(2, Tensor::matrix(4, 2));
    // upper block holds values {1,2,3}, so both planes carry ones
    w.bit_planes[1].at(0, 0) = 1.0;
    w.bit_planes[1].at(1, 1) = 1.0;
    w.bit_planes[0].at(0, 1) = 1.0;
    w.bit_planes[0].at(1, 0) = 1.0;
    // lower block only uses the LSB
    w.bit_planes[0].at(2, 0) = 1.0;
    w.bit_planes[0].at(2, 1) = 1.0;
    w.bit_planes[0].at(3, 0) = 1.0;
    quant::adjust_precision(w);   // masks the lower block's MSB
    l.weights = std::move(w);
    l.bias = Tensor({2});
    m.layers = {l};
    return m;
}

} // namespace bwq::testutil
