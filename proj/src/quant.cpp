#include "bwq/quant.hpp"
#include "bwq/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bwq::quant {

std::size_t WBGrid::block_elems(std::size_t vb, std::size_t hb) const {
    const std::size_t r = row_end(vb) - row_begin(vb);
    const std::size_t c = col_end(hb) - col_begin(hb);
    return r * c;
}

std::size_t WBGrid::retained_bits() const {
    std::size_t total = 0;
    for (std::size_t vb = 0; vb < num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < num_hblock; ++hb) {
            total += block_elems(vb, hb) * static_cast<std::size_t>(bitwidth(vb, hb));
        }
    }
    return total;
}

void WBGrid::recompute_bitwidths() {
    for (std::size_t vb = 0; vb < num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < num_hblock; ++hb) {
            int bw = 0;
            for (int b = 0; b < n; ++b) {
                bw += mask(vb, hb, b) ? 1 : 0;
            }
            bitwidth_table[vb * num_hblock + hb] = bw;
        }
    }
}

WBGrid partition(std::size_t rows, std::size_t cols,
                 std::size_t ou_height, std::size_t ou_width, int n) {
    if (rows == 0 || cols == 0 || ou_height == 0 || ou_width == 0) {
        throw std::invalid_argument("partition: dimensions must be positive");
    }
    WBGrid g;
    g.rows = rows;
    g.cols = cols;
    g.ou_height = ou_height;
    g.ou_width = ou_width;
    g.num_vblock = ceil_div(rows, ou_height);
    g.num_hblock = ceil_div(cols, ou_width);
    g.n = n;
    g.masks.assign(g.num_blocks() * static_cast<std::size_t>(n), 1);
    g.bitwidth_table.assign(g.num_blocks(), n);
    return g;
}

BitLayer BitLayer::from_real(const Tensor& w2d, int n,
                             std::size_t ou_height, std::size_t ou_width) {
    if (w2d.shape.size() != 2) {
        throw std::invalid_argument("from_real: expects a 2D weight matrix");
    }
    BitLayer l;
    l.rows = w2d.rows();
    l.cols = w2d.cols();
    l.n = n;
    l.wb_grid = partition(l.rows, l.cols, ou_height, ou_width, n);

    double s = 0.0;
    for (double v : w2d.data) s = std::max(s, std::fabs(v));
    l.scale = std::max(s, 1e-12);

    l.sign = Tensor::matrix(l.rows, l.cols, 1.0);
    l.bit_planes.assign(static_cast<std::size_t>(n), Tensor::matrix(l.rows, l.cols));

    const double levels = static_cast<double>((1 << n) - 1);
    for (std::size_t i = 0; i < w2d.numel(); ++i) {
        const double w = w2d.data[i];
        l.sign.data[i] = (w < 0.0) ? -1.0 : 1.0;
        long q = std::lround(std::fabs(w) * levels / l.scale);
        q = std::clamp(q, 0L, static_cast<long>(levels));
        for (int b = 0; b < n; ++b) {
            l.bit_planes[static_cast<std::size_t>(b)].data[i] = (q >> b) & 1 ? 1.0 : 0.0;
        }
    }
    return l;
}

void BitLayer::clamp_planes() {
    const auto& g = wb_grid;
    for (int b = 0; b < n; ++b) {
        Tensor& plane = bit_planes[static_cast<std::size_t>(b)];
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                const bool keep = g.mask(vb, hb, b) != 0;
                for (std::size_t i = g.row_begin(vb); i < g.row_end(vb); ++i) {
                    for (std::size_t j = g.col_begin(hb); j < g.col_end(hb); ++j) {
                        double& v = plane.at(i, j);
                        v = keep ? std::clamp(v, 0.0, 1.0) : 0.0;
                    }
                }
            }
        }
    }
}

Tensor reshape_conv(const Tensor& w4d) {
    if (w4d.shape.size() != 4 || w4d.shape[2] != w4d.shape[3]) {
        throw std::invalid_argument("reshape_conv: expects (C_out, C_in, k, k)");
    }
    const std::size_t c_out = w4d.shape[0], c_in = w4d.shape[1], k = w4d.shape[2];
    Tensor out = Tensor::matrix(c_in * k * k, c_out);
    for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = 0; b < k; ++b) {
                    const double v = w4d.data[((co * c_in + ci) * k + a) * k + b];
                    out.at(ci * k * k + a * k + b, co) = v;
                }
            }
        }
    }
    return out;
}

Tensor reshape_conv_inverse(const Tensor& w2d, std::size_t c_out,
                            std::size_t c_in, std::size_t k) {
    if (w2d.rows() != c_in * k * k || w2d.cols() != c_out) {
        throw std::invalid_argument("reshape_conv_inverse: shape mismatch");
    }
    Tensor out({c_out, c_in, k, k});
    for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t a = 0; a < k; ++a) {
                for (std::size_t b = 0; b < k; ++b) {
                    out.data[((co * c_in + ci) * k + a) * k + b] =
                        w2d.at(ci * k * k + a * k + b, co);
                }
            }
        }
    }
    return out;
}

Tensor reconstruct(const BitLayer& layer) {
    const auto& g = layer.wb_grid;
    Tensor w = Tensor::matrix(layer.rows, layer.cols);
    const double step = layer.level_step();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (layer.rows * layer.cols > 4096)
#endif
    for (long long ii = 0; ii < static_cast<long long>(layer.rows); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        const std::size_t vb = i / g.ou_height;
        for (std::size_t j = 0; j < layer.cols; ++j) {
            const std::size_t hb = j / g.ou_width;
            double acc = 0.0;
            for (int b = 0; b < layer.n; ++b) {
                if (!g.mask(vb, hb, b)) continue;
                acc += layer.bit_planes[static_cast<std::size_t>(b)].at(i, j) *
                       static_cast<double>(1 << b);
            }
            w.at(i, j) = layer.sign.at(i, j) * step * acc;
        }
    }
    return w;
}

namespace {

double block_plane_norm(const BitLayer& layer, std::size_t vb, std::size_t hb, int b) {
    const auto& g = layer.wb_grid;
    const Tensor& plane = layer.bit_planes[static_cast<std::size_t>(b)];
    double sq = 0.0;
    for (std::size_t i = g.row_begin(vb); i < g.row_end(vb); ++i) {
        for (std::size_t j = g.col_begin(hb); j < g.col_end(hb); ++j) {
            const double v = plane.at(i, j);
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

} // namespace

double group_lasso(const BitLayer& layer) {
    const auto& g = layer.wb_grid;
    double total = 0.0;
    for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
            for (int b = 0; b < layer.n; ++b) {
                if (!g.mask(vb, hb, b)) continue;
                total += block_plane_norm(layer, vb, hb, b);
            }
        }
    }
    return total;
}

std::vector<Tensor> group_lasso_grad(const BitLayer& layer) {
    const auto& g = layer.wb_grid;
    std::vector<Tensor> grads(static_cast<std::size_t>(layer.n),
                              Tensor::matrix(layer.rows, layer.cols));
    for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
            for (int b = 0; b < layer.n; ++b) {
                if (!g.mask(vb, hb, b)) continue;
                const double norm = block_plane_norm(layer, vb, hb, b);
                if (norm <= 0.0) continue;   // subgradient 0 at the origin
                const Tensor& plane = layer.bit_planes[static_cast<std::size_t>(b)];
                Tensor& grad = grads[static_cast<std::size_t>(b)];
                for (std::size_t i = g.row_begin(vb); i < g.row_end(vb); ++i) {
                    for (std::size_t j = g.col_begin(hb); j < g.col_end(hb); ++j) {
                        grad.at(i, j) = plane.at(i, j) / norm;
                    }
                }
            }
        }
    }
    return grads;
}

double reg_coefficient(const BitLayer& layer, std::size_t total_params) {
    if (total_params == 0) return 0.0;
    return static_cast<double>(layer.wb_grid.param_count()) *
           static_cast<double>(layer.wb_grid.retained_bits()) /
           static_cast<double>(total_params);
}

double total_loss(double ce, const std::vector<const BitLayer*>& layers, double alpha) {
    if (alpha < 0.0) {
        throw std::invalid_argument("total_loss: alpha must be >= 0");
    }
    if (alpha == 0.0) return ce;
    std::size_t total_params = 0;
    for (const auto* l : layers) total_params += l->wb_grid.param_count();
    double reg = 0.0;
    for (const auto* l : layers) {
        reg += reg_coefficient(*l, total_params) * group_lasso(*l);
    }
    return ce + alpha * reg;
}

void requantize(BitLayer& layer) {
    const Tensor w = reconstruct(layer);
    const double levels = static_cast<double>((1 << layer.n) - 1);
    const auto& g = layer.wb_grid;
    for (std::size_t i = 0; i < layer.rows; ++i) {
        const std::size_t vb = i / g.ou_height;
        for (std::size_t j = 0; j < layer.cols; ++j) {
            const std::size_t hb = j / g.ou_width;
            const double v = w.at(i, j);
            layer.sign.at(i, j) = (v < 0.0) ? -1.0 : 1.0;
            long q = std::lround(std::fabs(v) * levels / layer.scale);
            q = std::clamp(q, 0L, static_cast<long>(levels));
            for (int b = 0; b < layer.n; ++b) {
                const bool bit = ((q >> b) & 1) != 0 && g.mask(vb, hb, b) != 0;
                layer.bit_planes[static_cast<std::size_t>(b)].at(i, j) = bit ? 1.0 : 0.0;
            }
        }
    }
}

std::size_t adjust_precision(BitLayer& layer) {
    auto& g = layer.wb_grid;
    std::size_t cleared = 0;
    for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
            // Scan from the MSB down; stop at the first non-zero bit plane.
            for (int b = layer.n - 1; b >= 0; --b) {
                if (!g.mask(vb, hb, b)) continue;   // already removed
                bool all_zero = true;
                const Tensor& plane = layer.bit_planes[static_cast<std::size_t>(b)];
                for (std::size_t i = g.row_begin(vb); all_zero && i < g.row_end(vb); ++i) {
                    for (std::size_t j = g.col_begin(hb); j < g.col_end(hb); ++j) {
                        if (plane.at(i, j) != 0.0) {
                            all_zero = false;
                            break;
                        }
                    }
                }
                if (!all_zero) break;
                g.set_mask(vb, hb, b, 0);
                ++cleared;
            }
        }
    }
    g.recompute_bitwidths();
    return cleared;
}

Tensor pact(const Tensor& x, double beta) {
    if (beta <= 0.0) {
        throw std::invalid_argument("pact: beta must be positive");
    }
    Tensor y = x;
    for (double& v : y.data) {
        v = 0.5 * (std::fabs(v) - std::fabs(v - beta) + beta);
    }
    return y;
}

Tensor pact_grad_input(const Tensor& x, double beta, const Tensor& gy) {
    Tensor gx = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        gx.data[i] = (x.data[i] > 0.0 && x.data[i] < beta) ? gy.data[i] : 0.0;
    }
    return gx;
}

double pact_grad_beta(const Tensor& x, double beta, const Tensor& gy) {
    double g = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x.data[i] >= beta) g += gy.data[i];
    }
    return g;
}

Tensor QuantizedActs::dequant() const {
    Tensor y = codes;
    for (double& v : y.data) v *= step;
    return y;
}

QuantizedActs quantize_activation(const Tensor& y, double beta, int act_bits) {
    if (act_bits < 1) {
        throw std::invalid_argument("quantize_activation: act_bits must be >= 1");
    }
    const double levels = static_cast<double>((1 << act_bits) - 1);
    QuantizedActs q;
    q.step = beta / levels;
    q.codes = y;
    for (double& v : q.codes.data) {
        long code = std::lround(v * levels / beta);
        v = static_cast<double>(std::clamp(code, 0L, static_cast<long>(levels)));
    }
    return q;
}

std::size_t total_retained_bits(const std::vector<const BitLayer*>& layers) {
    std::size_t total = 0;
    for (const auto* l : layers) total += l->wb_grid.retained_bits();
    return total;
}

CompressionRatio compression_ratio(const std::vector<const BitLayer*>& layers, int act_bits) {
    CompressionRatio r;
    std::size_t params = 0;
    for (const auto* l : layers) params += l->wb_grid.param_count();
    const std::size_t bits = total_retained_bits(layers);
    if (bits == 0) {
        r.weight_infinite = true;
        r.weight_ratio = std::numeric_limits<double>::infinity();
    } else {
        r.weight_ratio = 32.0 * static_cast<double>(params) / static_cast<double>(bits);
    }
    r.act_ratio = 32.0 / static_cast<double>(act_bits);
    return r;
}

} // namespace bwq::quant
