#include "bwq/simkernel.hpp"
#include "bwq/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace bwq::sim {

void HardwareConfig::validate(std::size_t ou_height) const {
    const double energies[] = {e_adc_convert, e_dac_per_row, e_array_mac_per_ou,
                               e_buffer_read_per_bit, e_buffer_write_per_bit,
                               e_shift_add, e_controller_per_cycle};
    for (double e : energies) {
        if (e < 0.0) throw std::invalid_argument("hardware config: negative energy");
    }
    if (frequency <= 0.0) throw std::invalid_argument("hardware config: frequency must be > 0");
    if (adc_bits < adc_bits_for(ou_height)) {
        throw std::invalid_argument("hardware config: ADC resolution below what " +
                                    std::to_string(ou_height) + " concurrent rows need");
    }
    if (dac_bits != 1) throw std::invalid_argument("hardware config: DACs are 1-bit");
}

int adc_bits_for(std::size_t ou_height) {
    int bits = 1;
    while ((1ull << bits) < ou_height + 1) ++bits;
    return bits;
}

std::uint64_t CycleTrace::total_cycles() const {
    return static_cast<std::uint64_t>(events.size());
}

std::uint64_t CycleTrace::layer_events(int layer) const {
    std::uint64_t n = 0;
    for (const auto& e : events) {
        if (e.layer == layer) ++n;
    }
    return n;
}

CycleTrace schedule(const mapper::CrossbarLayout& layout,
                    const std::vector<const quant::WBGrid*>& grids,
                    int act_bits) {
    if (layout.scheme != mapper::Scheme::PrecisionAware) {
        throw std::invalid_argument("schedule: requires a precision-aware layout");
    }
    if (layout.blocks.size() != grids.size()) {
        throw std::invalid_argument("schedule: layout/grid layer count mismatch");
    }
    if (act_bits < 1) throw std::invalid_argument("schedule: act_bits must be >= 1");

    CycleTrace trace;
    trace.num_crossbars = layout.crossbars.size();
    trace.cycles_per_crossbar.assign(trace.num_crossbars, 0);

    const std::size_t ou_h = layout.spec.ou_height;
    const std::size_t ou_w = layout.spec.ou_width;

    for (std::size_t li = 0; li < grids.size(); ++li) {
        const auto& g = *grids[li];
        if (layout.blocks[li].size() != g.num_blocks()) {
            throw std::invalid_argument("schedule: layout/grid block count mismatch");
        }
        // column stripes (hblocks) outermost, row bands within a stripe
        for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
            for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
                const int bw = g.bitwidth(vb, hb);
                if (bw == 0) continue;   // the controller skips empty blocks
                const auto& ous = layout.blocks[li][vb * g.num_hblock + hb];
                if (ous.size() != static_cast<std::size_t>(bw)) {
                    throw std::invalid_argument("schedule: bitwidth/OU list mismatch");
                }
                for (int a = act_bits - 1; a >= 0; --a) {
                    for (std::size_t t = 0; t < ous.size(); ++t) {
                        const auto& ou = ous[t];
                        TraceEvent e;
                        e.crossbar = ou.crossbar;
                        e.cycle = ++trace.cycles_per_crossbar[ou.crossbar];
                        e.layer = static_cast<int>(li);
                        e.row_begin = ou.ou_row * ou_h;
                        e.row_end = e.row_begin + ou_h;
                        e.col_begin = ou.ou_col * ou_w;
                        e.col_end = e.col_begin + ou_w;
                        e.vblock = static_cast<int>(vb);
                        e.hblock = static_cast<int>(hb);
                        e.weight_bit = bw - 1 - static_cast<int>(t);
                        e.act_bit = a;
                        e.run_first = (t == 0) || (ous[t - 1].crossbar != ou.crossbar);
                        e.run_last = (t + 1 == ous.size()) || (ous[t + 1].crossbar != ou.crossbar);
                        // low bit of this crossbar-resident run, for readout
                        std::size_t end = t;
                        while (end + 1 < ous.size() && ous[end + 1].crossbar == ou.crossbar) ++end;
                        e.run_low_bit = bw - 1 - static_cast<int>(end);
                        e.skip = e.run_first && (a == act_bits - 1);
                        trace.events.push_back(e);
                    }
                }
            }
        }
    }

    // fetch_next: the IR may advance once the last event of a column stripe
    // retires on its crossbar.
    std::vector<long long> last_of_stripe(trace.num_crossbars, -1);
    std::vector<std::pair<int, int>> current(trace.num_crossbars, {-1, -1});
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        const std::pair<int, int> stripe{e.layer, e.hblock};
        if (current[e.crossbar] != stripe && last_of_stripe[e.crossbar] >= 0) {
            trace.events[static_cast<std::size_t>(last_of_stripe[e.crossbar])].fetch_next = true;
        }
        current[e.crossbar] = stripe;
        last_of_stripe[e.crossbar] = static_cast<long long>(i);
    }
    for (long long i : last_of_stripe) {
        if (i >= 0) trace.events[static_cast<std::size_t>(i)].fetch_next = true;
    }
    return trace;
}

namespace {

// One activation vector through one layer's events: models the per-crossbar
// shift-add register. Returns the saturated-conversion count.
std::size_t replay_vector(const std::vector<const TraceEvent*>& evs,
                          const quant::BitLayer& w, const IntMat& codes,
                          std::size_t vec, int adc_max, bool honor_skip,
                          long long* out_row, std::size_t num_crossbars,
                          std::size_t ou_w, std::vector<TraceEvent>* annotate,
                          const std::vector<std::size_t>* annotate_idx) {
    const auto& g = w.wb_grid;
    std::vector<std::vector<long long>> reg(num_crossbars,
                                            std::vector<long long>(ou_w, 0));
    std::size_t saturated = 0;

    for (std::size_t ei = 0; ei < evs.size(); ++ei) {
        const TraceEvent& e = *evs[ei];
        auto& r = reg[e.crossbar];
        if (e.run_first) {
            // A fresh activation-bit pass always clears the register; at a
            // block boundary the clear is gated by the skip signal.
            if (!e.skip || honor_skip) std::fill(r.begin(), r.end(), 0);
        }
        const std::size_t vb = static_cast<std::size_t>(e.vblock);
        const std::size_t hb = static_cast<std::size_t>(e.hblock);
        const Tensor& plane = w.bit_planes[static_cast<std::size_t>(e.weight_bit)];
        if (annotate) (*annotate)[(*annotate_idx)[ei]].adc_outputs.clear();
        for (std::size_t c = 0; c < ou_w; ++c) {
            const std::size_t col = g.col_begin(hb) + c;
            long long val = 0;
            if (col < w.cols) {
                for (std::size_t row = g.row_begin(vb); row < g.row_end(vb); ++row) {
                    if ((codes.at(vec, row) >> e.act_bit) & 1) {
                        if (plane.at(row, col) != 0.0) {
                            val += w.sign.at(row, col) > 0.0 ? 1 : -1;
                        }
                    }
                }
            }
            if (std::llabs(val) > adc_max) ++saturated;
            r[c] = 2 * r[c] + val;
            if (annotate) {
                (*annotate)[(*annotate_idx)[ei]].adc_outputs.push_back(static_cast<int>(val));
            }
        }
        if (annotate) {
            (*annotate)[(*annotate_idx)[ei]].psum_after = r;
        }
        if (e.run_last) {
            const long long unit = 1LL << (e.run_low_bit + e.act_bit);
            for (std::size_t c = 0; c < ou_w; ++c) {
                const std::size_t col = g.col_begin(hb) + c;
                if (col < w.cols) out_row[col] += r[c] * unit;
            }
        }
    }
    return saturated;
}

} // namespace

LayerExecResult execute_layer(const CycleTrace& trace, int layer,
                              const quant::BitLayer& weights, const IntMat& codes,
                              const HardwareConfig& hw, bool honor_skip,
                              CycleTrace* annotate) {
    if (codes.cols != weights.rows) {
        throw std::invalid_argument("execute_layer: activation width mismatch");
    }
    std::vector<const TraceEvent*> evs;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
        if (trace.events[i].layer == layer) {
            evs.push_back(&trace.events[i]);
            idx.push_back(i);
        }
    }
    if (annotate && annotate->events.size() != trace.events.size()) {
        throw std::invalid_argument("execute_layer: annotate trace shape mismatch");
    }

    LayerExecResult res;
    res.outputs = IntMat(codes.rows, weights.cols);
    const int adc_max = (1 << hw.adc_bits) - 1;
    const std::size_t ou_w = trace.events.empty() ? weights.wb_grid.ou_width
                                                  : (evs.empty() ? weights.wb_grid.ou_width
                                                                 : evs[0]->col_end - evs[0]->col_begin);

    std::size_t sat0 = 0;
    if (codes.rows > 0) {
        // vector 0 runs serially so the annotated trace is filled race-free
        sat0 = replay_vector(evs, weights, codes, 0, adc_max, honor_skip,
                             &res.outputs.v[0], trace.num_crossbars, ou_w,
                             annotate ? &annotate->events : nullptr,
                             annotate ? &idx : nullptr);
    }
    long long sat_rest = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : sat_rest)
#endif
    for (long long v = 1; v < static_cast<long long>(codes.rows); ++v) {
        sat_rest += static_cast<long long>(
            replay_vector(evs, weights, codes, static_cast<std::size_t>(v), adc_max,
                          honor_skip, &res.outputs.v[static_cast<std::size_t>(v) * res.outputs.cols],
                          trace.num_crossbars, ou_w, nullptr, nullptr));
    }
    res.saturation_events = sat0 + static_cast<std::size_t>(sat_rest);
    return res;
}

IntMat reference_layer(const quant::BitLayer& weights, const IntMat& codes) {
    if (codes.cols != weights.rows) {
        throw std::invalid_argument("reference_layer: activation width mismatch");
    }
    const auto& g = weights.wb_grid;
    // integer fixed-point weights: sign * sum_b 2^b * plane_b * mask
    IntMat w_int(weights.rows, weights.cols);
    for (std::size_t i = 0; i < weights.rows; ++i) {
        const std::size_t vb = i / g.ou_height;
        for (std::size_t j = 0; j < weights.cols; ++j) {
            const std::size_t hb = j / g.ou_width;
            long long mag = 0;
            for (int b = 0; b < weights.n; ++b) {
                if (!g.mask(vb, hb, b)) continue;
                if (weights.bit_planes[static_cast<std::size_t>(b)].at(i, j) != 0.0) {
                    mag += 1LL << b;
                }
            }
            w_int.at(i, j) = weights.sign.at(i, j) > 0.0 ? mag : -mag;
        }
    }
    IntMat out(codes.rows, weights.cols);
    for (std::size_t v = 0; v < codes.rows; ++v) {
        for (std::size_t j = 0; j < weights.cols; ++j) {
            long long acc = 0;
            for (std::size_t i = 0; i < weights.rows; ++i) {
                acc += codes.at(v, i) * w_int.at(i, j);
            }
            out.at(v, j) = acc;
        }
    }
    return out;
}

namespace {

IntMat to_codes(const Tensor& t) {
    IntMat m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        m.v[i] = std::llround(t.data[i]);
    }
    return m;
}

template <typename Engine>
PipelineResult run_pipeline(const nn::Model& model, const Tensor& input, Engine&& engine) {
    if (model.layers.empty()) throw std::invalid_argument("pipeline: empty model");
    PipelineResult res;
    const std::size_t samples = input.rows();

    Tensor clipped = input;
    for (double& v : clipped.data) v = std::clamp(v, 0.0, model.input_beta);
    quant::QuantizedActs q = quant::quantize_activation(
        clipped, model.input_beta, model.layers.front().act.act_bits);
    Tensor codes_flat = q.codes;
    double in_step = q.step;

    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const nn::Layer& l = model.layers[li];
        Tensor patch_codes = nn::im2col_layer(l, codes_flat);
        IntMat codes_int = to_codes(patch_codes);
        res.layer_inputs.push_back(codes_int);
        res.vectors_per_layer.push_back(codes_int.rows);

        IntMat acc = engine(li, l.weights, codes_int);
        res.layer_outputs.push_back(acc);

        const double unit = in_step * l.weights.level_step();
        Tensor z = Tensor::matrix(acc.rows, acc.cols);
        for (std::size_t r = 0; r < acc.rows; ++r) {
            for (std::size_t j = 0; j < acc.cols; ++j) {
                z.at(r, j) = static_cast<double>(acc.at(r, j)) * unit + l.bias[j];
            }
        }
        Tensor z_flat = nn::to_flat_layer(l, z, samples);
        if (li + 1 == model.layers.size()) {
            res.logits = z_flat;
            break;
        }
        Tensor y = quant::pact(z_flat, l.act.beta);
        quant::QuantizedActs qn = quant::quantize_activation(y, l.act.beta, l.act.act_bits);
        codes_flat = qn.codes;
        in_step = qn.step;
    }
    return res;
}

} // namespace

PipelineResult simulate_model(const nn::Model& model, const Tensor& input,
                              const mapper::CrossbarLayout& layout,
                              const HardwareConfig& hw, bool honor_skip,
                              CycleTrace* annotate) {
    std::vector<const quant::WBGrid*> grids;
    for (const auto& l : model.layers) grids.push_back(&l.weights.wb_grid);
    const int act_bits = model.layers.front().act.act_bits;
    const CycleTrace trace = schedule(layout, grids, act_bits);
    if (annotate) *annotate = trace;

    std::size_t saturation = 0;
    PipelineResult res = run_pipeline(
        model, input,
        [&](std::size_t li, const quant::BitLayer& w, const IntMat& codes) {
            LayerExecResult r = execute_layer(trace, static_cast<int>(li), w, codes,
                                              hw, honor_skip, annotate);
            saturation += r.saturation_events;
            return r.outputs;
        });
    res.saturation_events = saturation;
    return res;
}

PipelineResult reference_inference(const nn::Model& model, const Tensor& input) {
    return run_pipeline(model, input,
                        [](std::size_t, const quant::BitLayer& w, const IntMat& codes) {
                            return reference_layer(w, codes);
                        });
}

SimReport report(const CycleTrace& trace, const mapper::CrossbarLayout& layout,
                 const std::vector<const quant::WBGrid*>& grids,
                 const std::vector<std::string>& layer_names,
                 const HardwareConfig& hw, int act_bits,
                 const std::vector<std::size_t>& vectors_per_layer) {
    if (grids.size() != vectors_per_layer.size()) {
        throw std::invalid_argument("report: layer/vector count mismatch");
    }
    hw.validate(layout.spec.ou_height);

    SimReport rep;
    const std::size_t ou_w = layout.spec.ou_width;
    const std::size_t ou_h = layout.spec.ou_height;
    const double adc_scale = std::pow(hw.adc_energy_scale_per_bit, hw.adc_bits - 4);

    // per-crossbar per-vector cycle counts, for the parallel latency path
    std::vector<std::uint64_t> xbar_cycles(layout.crossbars.size(), 0);
    std::vector<std::uint64_t> runs_per_layer(grids.size(), 0);
    std::vector<std::uint64_t> events_per_layer(grids.size(), 0);
    for (const auto& e : trace.events) {
        xbar_cycles[e.crossbar] += 1;
        events_per_layer[static_cast<std::size_t>(e.layer)] += 1;
        if (e.run_last) runs_per_layer[static_cast<std::size_t>(e.layer)] += 1;
    }

    std::size_t total_params = 0, total_bits = 0;
    std::size_t ir_need = 0, or_need = 0;

    for (std::size_t li = 0; li < grids.size(); ++li) {
        const auto& g = *grids[li];
        const std::size_t vecs = vectors_per_layer[li];
        LayerReport lr;
        lr.name = li < layer_names.size() ? layer_names[li] : "layer" + std::to_string(li);

        const std::uint64_t activations = events_per_layer[li] * vecs;
        lr.cycles = activations;
        lr.active_ous = layout.active_ou_count(static_cast<int>(li));

        // each crossbar hosts a single layer, so its cycle count is the
        // layer-local sequential depth
        std::uint64_t critical = 0;
        for (std::size_t xb = 0; xb < layout.crossbars.size(); ++xb) {
            if (layout.crossbars[xb].layer != static_cast<int>(li)) continue;
            critical = std::max(critical, xbar_cycles[xb] * vecs);
        }
        lr.latency_s = static_cast<double>(critical) / hw.frequency;

        const double a = static_cast<double>(activations);
        lr.energy.adc = a * static_cast<double>(ou_w) * hw.e_adc_convert * adc_scale;
        lr.energy.dac = a * static_cast<double>(ou_h) * hw.e_dac_per_row;
        lr.energy.array = a * hw.e_array_mac_per_ou;
        const double reads = a * static_cast<double>(ou_h);
        const double writes = static_cast<double>(g.cols) * static_cast<double>(vecs) *
                              static_cast<double>(hw.output_bits);
        lr.energy.buffer = reads * hw.e_buffer_read_per_bit + writes * hw.e_buffer_write_per_bit;
        lr.energy.shift_add =
            (a + static_cast<double>(runs_per_layer[li] * vecs)) * hw.e_shift_add;
        lr.energy.controller = a * hw.e_controller_per_cycle;

        lr.lut_bytes = ceil_div(mapper::lut_bits(g), 8);

        // utilization over this layer's crossbars
        std::size_t used = 0, live = 0;
        for (const auto& xb : layout.crossbars) {
            if (xb.layer != static_cast<int>(li)) continue;
            for (const auto& s : xb.slots) {
                if (s.spare()) continue;
                ++used;
                live += s.cells.size();
            }
        }
        lr.utilization = used == 0 ? 1.0
                                   : static_cast<double>(live) /
                                         static_cast<double>(used * ou_w);

        total_params += g.param_count();
        total_bits += g.retained_bits();
        ir_need = std::max(ir_need, ceil_div(g.rows * static_cast<std::size_t>(act_bits), 8));
        or_need = std::max(or_need, ceil_div(g.cols * static_cast<std::size_t>(hw.output_bits), 8));

        rep.layers.push_back(lr);
    }

    rep.total.name = "total";
    double latency = 0.0;
    for (const auto& lr : rep.layers) {
        rep.total.cycles += lr.cycles;
        latency += lr.latency_s;
        rep.total.energy.adc += lr.energy.adc;
        rep.total.energy.dac += lr.energy.dac;
        rep.total.energy.array += lr.energy.array;
        rep.total.energy.buffer += lr.energy.buffer;
        rep.total.energy.shift_add += lr.energy.shift_add;
        rep.total.energy.controller += lr.energy.controller;
        rep.total.active_ous += lr.active_ous;
    }
    rep.total.latency_s = latency;
    rep.total.utilization = mapper::utilization(layout);
    rep.lut_bytes_total = mapper::lut_bytes(grids);
    rep.total.lut_bytes = rep.lut_bytes_total;
    rep.weight_ratio = total_bits == 0
                           ? std::numeric_limits<double>::infinity()
                           : 32.0 * static_cast<double>(total_params) /
                                 static_cast<double>(total_bits);
    rep.act_ratio = 32.0 / static_cast<double>(act_bits);
    rep.ir_capacity_ok = ir_need <= hw.ir_bytes;
    rep.or_capacity_ok = or_need <= hw.or_bytes;
    return rep;
}

std::vector<std::size_t> vectors_per_layer(const nn::Model& model, std::size_t num_samples) {
    std::vector<std::size_t> out;
    for (const auto& l : model.layers) {
        out.push_back(l.kind == nn::LayerKind::Conv ? num_samples * l.patches()
                                                    : num_samples);
    }
    return out;
}

std::vector<OuSweepRow> ou_sweep(const nn::Model& model,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                 const mapper::CrossbarSpec& base_spec,
                                 const HardwareConfig& hw,
                                 std::size_t num_samples) {
    std::vector<OuSweepRow> rows;
    const int act_bits = model.layers.front().act.act_bits;
    const std::vector<std::size_t> vecs = vectors_per_layer(model, num_samples);
    std::vector<std::string> names;
    for (const auto& l : model.layers) names.push_back(l.name);

    for (auto [h, w] : sizes) {
        if (h > base_spec.xbar_rows || w > base_spec.xbar_cols) {
            throw std::invalid_argument("ou_sweep: OU size exceeds crossbar dimensions");
        }
        // re-partition the stored binary planes at this granularity and
        // re-run the MSB-down adjustment from all-enabled masks
        std::vector<quant::BitLayer> relayers;
        relayers.reserve(model.layers.size());
        for (const auto& l : model.layers) {
            quant::BitLayer tmp = l.weights;
            tmp.wb_grid = quant::partition(tmp.rows, tmp.cols, h, w, tmp.n);
            quant::adjust_precision(tmp);
            relayers.push_back(std::move(tmp));
        }
        std::vector<const quant::WBGrid*> grids;
        std::size_t model_bits = 0;
        for (const auto& rl : relayers) {
            grids.push_back(&rl.wb_grid);
            model_bits += rl.wb_grid.retained_bits();
        }

        mapper::CrossbarSpec spec = base_spec;
        spec.ou_height = h;
        spec.ou_width = w;
        HardwareConfig hw_sz = hw;
        hw_sz.adc_bits = adc_bits_for(h);

        mapper::CrossbarLayout layout = mapper::layout_precision_aware(grids, spec);
        CycleTrace trace = schedule(layout, grids, act_bits);
        SimReport rep = report(trace, layout, grids, names, hw_sz, act_bits, vecs);

        OuSweepRow row;
        row.ou_height = h;
        row.ou_width = w;
        row.adc_bits = hw_sz.adc_bits;
        row.model_bits = model_bits;
        row.cycles = rep.total.cycles;
        row.energy = rep.total.energy;
        rows.push_back(row);
    }
    return rows;
}

} // namespace bwq::sim
