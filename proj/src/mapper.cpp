#include "bwq/mapper.hpp"
#include "bwq/common.hpp"

#include <algorithm>
#include <stdexcept>

namespace bwq::mapper {

void CrossbarSpec::validate() const {
    if (ou_height == 0 || ou_width == 0 || xbar_rows == 0 || xbar_cols == 0) {
        throw std::invalid_argument("crossbar spec: dimensions must be positive");
    }
    if (ou_height > xbar_rows || ou_width > xbar_cols) {
        throw std::invalid_argument("crossbar spec: OU must fit inside the crossbar");
    }
    if (bits_per_cell != 1) {
        throw std::invalid_argument("crossbar spec: only 1-bit cells are modeled");
    }
}

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::PrecisionAware: return "aware";
        case Scheme::Consecutive: return "consecutive";
        case Scheme::SameOu: return "same-ou";
    }
    return "?";
}

std::size_t CrossbarLayout::active_ou_count() const {
    std::size_t n = 0;
    for (const auto& xb : crossbars) {
        for (const auto& s : xb.slots) {
            if (!s.spare()) ++n;
        }
    }
    return n;
}

std::size_t CrossbarLayout::active_ou_count(int layer) const {
    std::size_t n = 0;
    for (const auto& xb : crossbars) {
        if (xb.layer != layer) continue;
        for (const auto& s : xb.slots) {
            if (!s.spare()) ++n;
        }
    }
    return n;
}

std::size_t CrossbarLayout::spare_ou_count() const {
    std::size_t n = 0;
    for (const auto& xb : crossbars) {
        for (const auto& s : xb.slots) {
            if (s.spare()) ++n;
        }
    }
    return n;
}

namespace {

// Placement in abstract per-layer coordinates: vblock i owns OU row
// (i % ou_rows) of crossbar row-group (i / ou_rows); OU columns count from 0
// at every row band and spill into a fresh crossbar segment past ou_cols.
struct AbstractCell {
    std::size_t row_group, segment, ou_row, ou_col;
    OUCell cell;
};

struct LayerPlan {
    std::vector<AbstractCell> cells;
    std::vector<std::size_t> segments_per_group;   // crossbars per row group
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> block_ou_seq;
    // block_ou_seq[block] = (abstract ou index within row band, unused) kept
    // only for precision-aware; see materialize().
};

void note_segment(LayerPlan& plan, std::size_t row_group, std::size_t seg) {
    if (plan.segments_per_group.size() <= row_group) {
        plan.segments_per_group.resize(row_group + 1, 0);
    }
    plan.segments_per_group[row_group] =
        std::max(plan.segments_per_group[row_group], seg + 1);
}

// Shared materialization: turn abstract cells into crossbars with ids
// assigned row-group major, segment minor, appended after `base`.
void materialize(CrossbarLayout& out, const LayerPlan& plan, int layer) {
    const std::size_t base = out.crossbars.size();
    std::vector<std::size_t> group_offset(plan.segments_per_group.size(), 0);
    std::size_t total = 0;
    for (std::size_t g = 0; g < plan.segments_per_group.size(); ++g) {
        group_offset[g] = total;
        total += plan.segments_per_group[g];
    }
    for (std::size_t i = 0; i < total; ++i) {
        Crossbar xb;
        xb.layer = layer;
        xb.ou_rows = out.spec.ou_rows();
        xb.ou_cols = out.spec.ou_cols();
        xb.slots.assign(xb.ou_rows * xb.ou_cols, OUSlot{});
        out.crossbars.push_back(std::move(xb));
    }
    for (const auto& ac : plan.cells) {
        const std::size_t id = base + group_offset[ac.row_group] + ac.segment;
        out.crossbars[id].slot(ac.ou_row, ac.ou_col).cells.push_back(ac.cell);
    }
}

void require_matching_geometry(const std::vector<const quant::WBGrid*>& grids,
                               const CrossbarSpec& spec) {
    for (const auto* g : grids) {
        if (g->ou_height != spec.ou_height || g->ou_width != spec.ou_width) {
            throw std::invalid_argument(
                "layout: weight-block size differs from the crossbar OU size");
        }
    }
}

std::size_t row_group_of(const CrossbarSpec& spec, std::size_t vb) {
    return vb / spec.ou_rows();
}
std::size_t ou_row_of(const CrossbarSpec& spec, std::size_t vb) {
    return vb % spec.ou_rows();
}

} // namespace

CrossbarLayout layout_precision_aware(const std::vector<const quant::WBGrid*>& grids,
                                      const CrossbarSpec& spec) {
    spec.validate();
    require_matching_geometry(grids, spec);
    CrossbarLayout out;
    out.scheme = Scheme::PrecisionAware;
    out.spec = spec;
    out.blocks.resize(grids.size());

    const std::size_t c_ou = spec.ou_cols();
    for (std::size_t li = 0; li < grids.size(); ++li) {
        const auto& g = *grids[li];
        LayerPlan plan;
        out.blocks[li].assign(g.num_blocks(), {});
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> block_abs(g.num_blocks());

        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            const std::size_t rg = row_group_of(spec, vb);
            const std::size_t orow = ou_row_of(spec, vb);
            std::size_t cursor = 0;   // OU column index, restarts per row band
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                const std::size_t bw = static_cast<std::size_t>(g.bitwidth(vb, hb));
                if (bw == 0) continue;
                // keep a block's OU run inside one crossbar when it can fit
                if (bw <= c_ou) {
                    const std::size_t seg_end = (cursor / c_ou + 1) * c_ou;
                    if (cursor + bw > seg_end) cursor = seg_end;
                }
                for (std::size_t t = 0; t < bw; ++t) {
                    const int bit = static_cast<int>(bw - 1 - t);   // MSB first
                    const std::size_t abs_col = cursor + t;
                    const std::size_t seg = abs_col / c_ou;
                    note_segment(plan, rg, seg);
                    // the OU carries this bit of every column of the block,
                    // padding columns included, so it is fully packed
                    for (std::size_t v = 0; v < spec.ou_width; ++v) {
                        plan.cells.push_back({rg, seg, orow, abs_col % c_ou,
                                              OUCell{static_cast<int>(li),
                                                     static_cast<int>(vb),
                                                     static_cast<int>(hb), bit,
                                                     static_cast<int>(v)}});
                    }
                    block_abs[vb * g.num_hblock + hb].push_back({rg, abs_col});
                }
                cursor += bw;
            }
        }

        const std::size_t base = out.crossbars.size();
        std::vector<std::size_t> group_offset(plan.segments_per_group.size(), 0);
        std::size_t total = 0;
        for (std::size_t rg = 0; rg < plan.segments_per_group.size(); ++rg) {
            group_offset[rg] = total;
            total += plan.segments_per_group[rg];
        }
        materialize(out, plan, static_cast<int>(li));

        // resolve the MSB-first OU coordinate list per block
        for (std::size_t b = 0; b < g.num_blocks(); ++b) {
            const std::size_t vb = b / g.num_hblock;
            for (auto [rg, abscol] : block_abs[b]) {
                OUCoord c;
                c.crossbar = base + group_offset[rg] + abscol / c_ou;
                c.ou_row = ou_row_of(spec, vb);
                c.ou_col = abscol % c_ou;
                out.blocks[li][b].push_back(c);
            }
        }
    }
    return out;
}

CrossbarLayout layout_consecutive(const std::vector<const quant::WBGrid*>& grids,
                                  const CrossbarSpec& spec) {
    spec.validate();
    require_matching_geometry(grids, spec);
    CrossbarLayout out;
    out.scheme = Scheme::Consecutive;
    out.spec = spec;
    out.blocks.resize(grids.size());

    const std::size_t c_ou = spec.ou_cols();
    for (std::size_t li = 0; li < grids.size(); ++li) {
        const auto& g = *grids[li];
        LayerPlan plan;
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            const std::size_t rg = row_group_of(spec, vb);
            const std::size_t orow = ou_row_of(spec, vb);
            std::size_t col = 0;   // physical column index within the row band
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                const std::size_t bw = static_cast<std::size_t>(g.bitwidth(vb, hb));
                if (bw == 0) continue;
                // a block contributes all ou_width vector slots (padding
                // included) so every scheme arranges the same column set
                for (std::size_t v = 0; v < spec.ou_width; ++v) {
                    if (col / spec.ou_width != (col + bw - 1) / spec.ou_width) {
                        ++out.straddle_count;
                    }
                    for (std::size_t t = 0; t < bw; ++t) {
                        const std::size_t ou = (col + t) / spec.ou_width;
                        const std::size_t seg = ou / c_ou;
                        note_segment(plan, rg, seg);
                        plan.cells.push_back({rg, seg, orow, ou % c_ou,
                                              OUCell{static_cast<int>(li),
                                                     static_cast<int>(vb),
                                                     static_cast<int>(hb),
                                                     static_cast<int>(bw - 1 - t),
                                                     static_cast<int>(v)}});
                    }
                    col += bw;
                }
            }
        }
        materialize(out, plan, static_cast<int>(li));
    }
    return out;
}

CrossbarLayout layout_same_ou(const std::vector<const quant::WBGrid*>& grids,
                              const CrossbarSpec& spec) {
    spec.validate();
    require_matching_geometry(grids, spec);
    CrossbarLayout out;
    out.scheme = Scheme::SameOu;
    out.spec = spec;
    out.blocks.resize(grids.size());

    const std::size_t c_ou = spec.ou_cols();
    for (std::size_t li = 0; li < grids.size(); ++li) {
        const auto& g = *grids[li];
        LayerPlan plan;
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            const std::size_t rg = row_group_of(spec, vb);
            const std::size_t orow = ou_row_of(spec, vb);
            std::size_t ou = 0;   // OU index within the row band
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                const std::size_t bw = static_cast<std::size_t>(g.bitwidth(vb, hb));
                if (bw == 0) continue;
                const std::size_t per_ou = spec.ou_width / bw;
                if (per_ou == 0) {
                    throw std::invalid_argument(
                        "same-ou mapping: block bitwidth exceeds OU width");
                }
                const std::size_t vecs = spec.ou_width;
                for (std::size_t v0 = 0; v0 < vecs; v0 += per_ou, ++ou) {
                    const std::size_t seg = ou / c_ou;
                    note_segment(plan, rg, seg);
                    const std::size_t chunk = std::min(per_ou, vecs - v0);
                    for (std::size_t dv = 0; dv < chunk; ++dv) {
                        for (std::size_t t = 0; t < bw; ++t) {
                            plan.cells.push_back({rg, seg, orow, ou % c_ou,
                                                  OUCell{static_cast<int>(li),
                                                         static_cast<int>(vb),
                                                         static_cast<int>(hb),
                                                         static_cast<int>(bw - 1 - t),
                                                         static_cast<int>(v0 + dv)}});
                        }
                    }
                }
            }
        }
        materialize(out, plan, static_cast<int>(li));
    }
    return out;
}

CrossbarLayout layout(Scheme s, const std::vector<const quant::WBGrid*>& grids,
                      const CrossbarSpec& spec) {
    switch (s) {
        case Scheme::PrecisionAware: return layout_precision_aware(grids, spec);
        case Scheme::Consecutive: return layout_consecutive(grids, spec);
        case Scheme::SameOu: return layout_same_ou(grids, spec);
    }
    throw std::logic_error("unknown scheme");
}

double utilization(const CrossbarLayout& layout) {
    std::size_t used_ous = 0, live_cols = 0;
    for (const auto& xb : layout.crossbars) {
        for (const auto& s : xb.slots) {
            if (s.spare()) continue;
            ++used_ous;
            live_cols += s.cells.size();
        }
    }
    if (used_ous == 0) return 1.0;   // vacuously fully utilized
    return static_cast<double>(live_cols) /
           static_cast<double>(used_ous * layout.spec.ou_width);
}

std::size_t lut_entry_bits(int n) {
    std::size_t bits = 1;
    while ((1u << bits) < static_cast<unsigned>(n + 1)) ++bits;
    return bits;
}

std::size_t lut_bits(const quant::WBGrid& grid) {
    return grid.num_blocks() * lut_entry_bits(grid.n);
}

std::size_t lut_bytes(const std::vector<const quant::WBGrid*>& grids) {
    std::size_t bits = 0;
    for (const auto* g : grids) bits += lut_bits(*g);
    return ceil_div(bits, 8);
}

} // namespace bwq::mapper
