#pragma once

// Placement of (weight block, bit plane) pairs onto OU-sized crossbar tiles.
//
// Three schemes are modeled:
//   precision-aware : one OU per retained (block, bit); the OU holds that
//                     bit of every weight in the block, so used OUs are
//                     always fully packed. Rows of blocks whose total
//                     bitwidths differ leave spare OUs behind.
//   consecutive     : bits of one weight vector occupy adjacent columns;
//                     vectors may straddle OU boundaries, which would need
//                     cross-OU accumulation (counted, not simulated).
//   same-ou         : all bits of a weight stay inside one OU; spare
//                     columns appear whenever ou_width % bitwidth != 0.
//
// A block always contributes ou_width vector slots (padding slots included),
// so all three schemes arrange the same column multiset and differ only in
// placement.
//
// Only the precision-aware layout feeds the cycle-level simulator.

#include "bwq/quant.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bwq::mapper {

struct CrossbarSpec {
    std::size_t xbar_rows = 128;
    std::size_t xbar_cols = 128;
    std::size_t ou_height = 9;     // concurrently driven wordlines
    std::size_t ou_width = 8;      // concurrently sensed bitlines
    int bits_per_cell = 1;

    std::size_t ou_rows() const { return xbar_rows / ou_height; }
    std::size_t ou_cols() const { return xbar_cols / ou_width; }
    void validate() const;
};

enum class Scheme { PrecisionAware, Consecutive, SameOu };
std::string scheme_name(Scheme s);

// One physical OU column holding bit `bit` of block-local weight column
// `vec` of block (vblock, hblock) in `layer`.
struct OUCell {
    int layer = 0;
    int vblock = 0, hblock = 0;
    int bit = 0;
    int vec = 0;
};

struct OUSlot {
    std::vector<OUCell> cells;   // empty -> spare OU
    bool spare() const { return cells.empty(); }
};

struct Crossbar {
    int layer = 0;
    std::size_t ou_rows = 0, ou_cols = 0;
    std::vector<OUSlot> slots;   // row-major [ou_rows][ou_cols]
    OUSlot& slot(std::size_t r, std::size_t c) { return slots[r * ou_cols + c]; }
    const OUSlot& slot(std::size_t r, std::size_t c) const { return slots[r * ou_cols + c]; }
};

struct OUCoord {
    std::size_t crossbar = 0;
    std::size_t ou_row = 0, ou_col = 0;
};

struct CrossbarLayout {
    Scheme scheme = Scheme::PrecisionAware;
    CrossbarSpec spec;
    std::vector<Crossbar> crossbars;
    // blocks[layer][vb * num_hblock + hb] = that block's OUs, MSB first.
    // Empty for a bitwidth-0 block. Meaningful for the precision-aware
    // scheme only; the other schemes leave it empty.
    std::vector<std::vector<std::vector<OUCoord>>> blocks;
    // consecutive scheme: weight vectors whose column span crosses an OU
    // boundary and therefore needs cross-OU accumulation
    std::size_t straddle_count = 0;

    std::size_t active_ou_count() const;
    std::size_t active_ou_count(int layer) const;
    std::size_t spare_ou_count() const;
};

CrossbarLayout layout_precision_aware(const std::vector<const quant::WBGrid*>& grids,
                                      const CrossbarSpec& spec);
CrossbarLayout layout_consecutive(const std::vector<const quant::WBGrid*>& grids,
                                  const CrossbarSpec& spec);
CrossbarLayout layout_same_ou(const std::vector<const quant::WBGrid*>& grids,
                              const CrossbarSpec& spec);
CrossbarLayout layout(Scheme s, const std::vector<const quant::WBGrid*>& grids,
                      const CrossbarSpec& spec);

// Fraction of cells in non-spare OUs that hold live bit data; 1.0 for an
// empty layout.
double utilization(const CrossbarLayout& layout);

// Bits needed for one bitwidth LUT entry covering precisions 0..n.
std::size_t lut_entry_bits(int n);
std::size_t lut_bits(const quant::WBGrid& grid);
// Total controller LUT footprint: sum of per-block entries over all layers,
// rounded up to whole bytes once.
std::size_t lut_bytes(const std::vector<const quant::WBGrid*>& grids);

} // namespace bwq::mapper
