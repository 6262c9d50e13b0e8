#pragma once

// Block-wise mixed-precision quantization core: bit-plane weight
// representation, weight-block partitioning, block-level group Lasso,
// re-quantization, MSB-down precision adjustment and clipped activation
// quantization.
//
// A layer's weights live as n continuous bit planes in [0,1] plus a fixed
// sign matrix and a per-layer scale. The reconstructed weight is
//
//   W = sign .* s/(2^n-1) * sum_b plane_b * 2^b * m(block,b)
//
// where m is a per-(block,bit) binary mask. Masks only ever flip 1 -> 0,
// so the retained bit count of a layer is non-increasing over a run.

#include "bwq/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bwq::quant {

// 2D partition of a layer's flattened weight matrix into OU-sized weight
// blocks, plus the per-block bit masks and bitwidth table.
struct WBGrid {
    std::size_t rows = 0, cols = 0;        // real (unpadded) weight extent
    std::size_t ou_height = 9, ou_width = 8;
    std::size_t num_vblock = 0, num_hblock = 0;
    int n = 8;

    std::vector<std::uint8_t> masks;       // [vblock][hblock][bit]
    std::vector<int> bitwidth_table;       // [vblock][hblock]

    std::size_t num_blocks() const { return num_vblock * num_hblock; }

    std::uint8_t mask(std::size_t vb, std::size_t hb, int bit) const {
        return masks[(vb * num_hblock + hb) * static_cast<std::size_t>(n) + bit];
    }
    void set_mask(std::size_t vb, std::size_t hb, int bit, std::uint8_t v) {
        masks[(vb * num_hblock + hb) * static_cast<std::size_t>(n) + bit] = v;
    }
    int bitwidth(std::size_t vb, std::size_t hb) const {
        return bitwidth_table[vb * num_hblock + hb];
    }

    // Real-extent bounds of a block; padding cells lie outside [begin, end).
    std::size_t row_begin(std::size_t vb) const { return vb * ou_height; }
    std::size_t row_end(std::size_t vb) const {
        std::size_t e = (vb + 1) * ou_height;
        return e < rows ? e : rows;
    }
    std::size_t col_begin(std::size_t hb) const { return hb * ou_width; }
    std::size_t col_end(std::size_t hb) const {
        std::size_t e = (hb + 1) * ou_width;
        return e < cols ? e : cols;
    }
    // Count of real weight cells in a block (excludes padding).
    std::size_t block_elems(std::size_t vb, std::size_t hb) const;

    // sum over blocks of block_elems * bitwidth
    std::size_t retained_bits() const;
    std::size_t param_count() const { return rows * cols; }

    void recompute_bitwidths();
};

// ceil-partition of a rows x cols matrix into ou_height x ou_width blocks,
// all masks enabled, every block at n bits.
WBGrid partition(std::size_t rows, std::size_t cols,
                 std::size_t ou_height, std::size_t ou_width, int n = 8);

// A layer's weights in trainable bit-plane form.
struct BitLayer {
    std::size_t rows = 0, cols = 0;
    Tensor sign;                       // rows x cols, values in {-1,+1}
    double scale = 1.0;                // per-layer s, fixed after decomposition
    int n = 8;
    std::vector<Tensor> bit_planes;    // n tensors, rows x cols, values in [0,1]
    WBGrid wb_grid;

    double level_step() const { return scale / static_cast<double>((1 << n) - 1); }

    // Decompose a real-valued matrix: s = max|W| (floor 1e-12), planes from
    // the base-2 expansion of round(|W| * (2^n-1) / s).
    static BitLayer from_real(const Tensor& w2d, int n,
                              std::size_t ou_height, std::size_t ou_width);

    // Forces masked plane regions to exactly zero and planes into [0,1].
    void clamp_planes();
};

// (C_out, C_in, k, k) -> (C_in*k*k, C_out); element (co,ci,a,b) lands at
// row ci*k*k + a*k + b, column co.
Tensor reshape_conv(const Tensor& w4d);
Tensor reshape_conv_inverse(const Tensor& w2d, std::size_t c_out,
                            std::size_t c_in, std::size_t k);

Tensor reconstruct(const BitLayer& layer);

// sum over (block, bit) of the L2 norm of the masked plane restricted to the
// block's real cells. Padding cells never contribute.
double group_lasso(const BitLayer& layer);

// d(group_lasso)/d(plane): per element, m * plane / ||group||_2; the
// subgradient at a zero-norm group is 0.
std::vector<Tensor> group_lasso_grad(const BitLayer& layer);

// Regularization coefficient of one layer in the training objective:
// #Param(W^r) * #Bit(W^r) / #Param(all layers), with #Bit the current
// retained bit count.
double reg_coefficient(const BitLayer& layer, std::size_t total_params);

double total_loss(double ce, const std::vector<const BitLayer*>& layers, double alpha);

// Round the reconstructed weight onto the fixed-point grid and re-expand it
// into exact {0,1} planes; sign refreshed from the reconstructed value with
// sign(0) = +1. Masked bits stay zero.
void requantize(BitLayer& layer);

// MSB-down removal of all-zero bit planes per block; masks never re-enable.
// Returns the number of (block, bit) masks newly cleared.
std::size_t adjust_precision(BitLayer& layer);

struct PactParam {
    double beta = 2.0;       // trainable clip level, kept > 0
    int act_bits = 8;
};
inline constexpr double kBetaFloor = 1e-6;

// y = 0.5 * (|x| - |x - beta| + beta), i.e. clip to [0, beta].
Tensor pact(const Tensor& x, double beta);
// dy/dx = 1 on (0, beta), else 0
Tensor pact_grad_input(const Tensor& x, double beta, const Tensor& gy);
// dy/dbeta = 1 where x >= beta, else 0
double pact_grad_beta(const Tensor& x, double beta, const Tensor& gy);

struct QuantizedActs {
    Tensor codes;            // integers in [0, 2^bits - 1], stored as doubles
    double step = 0.0;       // beta / (2^bits - 1)
    Tensor dequant() const;
};
// Uniform quantization of y in [0, beta]; training uses a straight-through
// gradient so this has no backward of its own.
QuantizedActs quantize_activation(const Tensor& y, double beta, int act_bits);

struct CompressionRatio {
    double weight_ratio = 0.0;   // 32-bit baseline bits / retained bits
    double act_ratio = 0.0;      // 32 / act_bits
    bool weight_infinite = false;
};
CompressionRatio compression_ratio(const std::vector<const BitLayer*>& layers, int act_bits);

std::size_t total_retained_bits(const std::vector<const BitLayer*>& layers);

} // namespace bwq::quant
