#pragma once

// Cycle-level model of the OU-based crossbar accelerator: the memory
// controller's walk over mixed-precision weight blocks, a functional
// (bit-exact integer) execution of that walk, and a latency/energy/indexing
// report. One cycle = one OU activation with ou_width parallel ADC
// conversions. The activation-bit loop wraps each block's weight-bit-plane
// loop so the fetched activation slice is reused; a second shift-add stage
// combines activation bits.

#include "bwq/mapper.hpp"
#include "bwq/nn.hpp"
#include "bwq/quant.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bwq::sim {

struct HardwareConfig {
    double frequency = 1.2e9;
    int adc_bits = 4;
    int dac_bits = 1;

    // Per-event energies in joules. Defaults split a 25 W-class chip budget
    // at 1.2 GHz across 1024 PIM banks, one OU activation per bank-cycle:
    // ADC 23.22 W over 8 conversions/cycle, DAC 0.36 W over 9 driven rows,
    // array 0.89 W per MAC, 64-bit buffer 0.59 W, controller 92.8 mW and
    // shift-add digital 92.6 mW.
    double e_adc_convert = 23.22 / (1024.0 * 8.0 * 1.2e9);
    double e_dac_per_row = 0.36 / (1024.0 * 9.0 * 1.2e9);
    double e_array_mac_per_ou = 0.89 / (1024.0 * 1.2e9);
    double e_buffer_read_per_bit = 0.59 / (1024.0 * 64.0 * 1.2e9);
    double e_buffer_write_per_bit = 0.59 / (1024.0 * 64.0 * 1.2e9);
    double e_shift_add = 92.6e-3 / (1024.0 * 1.2e9);
    double e_controller_per_cycle = 92.8e-3 / (1024.0 * 1.2e9);

    // ADC conversion energy grows by this factor per resolution bit beyond
    // the 4-bit baseline (used by the OU-size sweep).
    double adc_energy_scale_per_bit = 2.0;
    int output_bits = 16;          // output-register width per element
    std::size_t ir_bytes = 2048;   // input register capacity
    std::size_t or_bytes = 256;    // output register capacity

    void validate(std::size_t ou_height) const;
};

// ADC resolution needed to read an OU with `ou_height` concurrent rows.
int adc_bits_for(std::size_t ou_height);

struct TraceEvent {
    std::uint64_t cycle = 0;        // per-crossbar, 1-based
    std::size_t crossbar = 0;
    int layer = 0;
    std::size_t row_begin = 0, row_end = 0;   // activated crossbar rows
    std::size_t col_begin = 0, col_end = 0;   // activated crossbar columns
    int vblock = 0, hblock = 0;               // wb_id
    int weight_bit = 0, act_bit = 0;
    bool skip = false;              // first weight-bit event of a new block
    bool fetch_next = false;        // column stripe completed, IR may refill
    std::vector<int> adc_outputs;   // filled by execute() for a traced vector
    std::vector<long long> psum_after;

    // internal controller bookkeeping, not serialized
    bool run_first = false, run_last = false;
    int run_low_bit = 0;            // lowest weight bit in this crossbar run
};

struct CycleTrace {
    std::vector<TraceEvent> events;   // one pass over one activation vector
    std::size_t num_crossbars = 0;
    std::vector<std::uint64_t> cycles_per_crossbar;
    std::uint64_t total_cycles() const;
    std::uint64_t layer_events(int layer) const;
};

// Controller schedule over a precision-aware layout: hblock-major,
// vblock-minor walk, zero-bitwidth blocks skipped, MSB-first plane loop
// inside the activation-bit loop per block.
CycleTrace schedule(const mapper::CrossbarLayout& layout,
                    const std::vector<const quant::WBGrid*>& grids,
                    int act_bits);

struct IntMat {
    std::size_t rows = 0, cols = 0;
    std::vector<long long> v;
    IntMat() = default;
    IntMat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0) {}
    long long& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    long long at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    bool operator==(const IntMat& o) const = default;
};

struct LayerExecResult {
    IntMat outputs;                  // [vectors, cols] integer accumulators
    std::size_t saturation_events = 0;
};

// Replays the trace for every activation vector (rows of `codes`), modeling
// the per-crossbar shift-add register. With honor_skip = false the register
// is not cleared at block boundaries, reproducing a controller without the
// skip signal. If annotate != nullptr, adc_outputs/psum_after of its events
// are filled from the first activation vector.
LayerExecResult execute_layer(const CycleTrace& trace, int layer,
                              const quant::BitLayer& weights, const IntMat& codes,
                              const HardwareConfig& hw, bool honor_skip = true,
                              CycleTrace* annotate = nullptr);

// Plain integer matmul of the reconstructed fixed-point weights; the
// crossbar-free oracle the scheduler's execution must match bit-exactly.
IntMat reference_layer(const quant::BitLayer& weights, const IntMat& codes);

struct PipelineResult {
    std::vector<IntMat> layer_inputs;    // quantized activation codes per layer
    std::vector<IntMat> layer_outputs;   // integer accumulators per layer
    Tensor logits;
    std::size_t saturation_events = 0;
    std::vector<std::size_t> vectors_per_layer;
};

// End-to-end inference through the crossbar model: per layer, integer
// execution, then dequantize, add bias, clip and re-quantize for the next
// layer. reference_inference runs the same pipeline on the matmul oracle.
PipelineResult simulate_model(const nn::Model& model, const Tensor& input,
                              const mapper::CrossbarLayout& layout,
                              const HardwareConfig& hw, bool honor_skip = true,
                              CycleTrace* annotate = nullptr);
PipelineResult reference_inference(const nn::Model& model, const Tensor& input);

struct ComponentEnergy {
    double adc = 0, dac = 0, array = 0, buffer = 0, shift_add = 0, controller = 0;
    double total() const { return adc + dac + array + buffer + shift_add + controller; }
};

struct LayerReport {
    std::string name;
    std::uint64_t cycles = 0;        // OU activations summed over crossbars
    double latency_s = 0;            // crossbars in parallel, layers sequential
    ComponentEnergy energy;
    std::size_t lut_bytes = 0;
    double utilization = 1.0;
    std::uint64_t active_ous = 0;
};

struct SimReport {
    std::vector<LayerReport> layers;
    LayerReport total;
    std::size_t lut_bytes_total = 0;
    double weight_ratio = 0, act_ratio = 0;
    std::size_t saturation_events = 0;
    bool ir_capacity_ok = true, or_capacity_ok = true;
};

SimReport report(const CycleTrace& trace, const mapper::CrossbarLayout& layout,
                 const std::vector<const quant::WBGrid*>& grids,
                 const std::vector<std::string>& layer_names,
                 const HardwareConfig& hw, int act_bits,
                 const std::vector<std::size_t>& vectors_per_layer);

struct OuSweepRow {
    std::size_t ou_height = 0, ou_width = 0;
    int adc_bits = 0;
    std::size_t model_bits = 0;
    std::uint64_t cycles = 0;
    ComponentEnergy energy;
};

// Re-partitions the trained binary planes at each OU size, re-runs the
// precision adjustment at that granularity, and reports cycles/energy with
// the ADC resolution the taller OU requires.
std::vector<OuSweepRow> ou_sweep(const nn::Model& model,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                 const mapper::CrossbarSpec& base_spec,
                                 const HardwareConfig& hw,
                                 std::size_t num_samples);

// Activation-vector counts per layer for a batch of `num_samples` inputs
// (conv layers see one vector per im2col patch).
std::vector<std::size_t> vectors_per_layer(const nn::Model& model, std::size_t num_samples);

} // namespace bwq::sim
