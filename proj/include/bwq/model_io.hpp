#pragma once

// Stable on-disk formats: quantized-model JSON, strict run-config JSON,
// layout JSON, per-cycle trace JSONL and report CSVs. Serialization is
// deterministic: the same in-memory state always produces identical bytes.

#include "bwq/mapper.hpp"
#include "bwq/nn.hpp"
#include "bwq/simkernel.hpp"
#include "bwq/trainer.hpp"

#include <string>
#include <vector>

namespace bwq::io {

struct RunConfig {
    trainer::TrainConfig train;      // carries task and seed
    sim::HardwareConfig hardware;
    mapper::CrossbarSpec crossbar;
};

// Strict schema: unknown keys anywhere in the document are rejected.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

void save_model(const std::string& path, const nn::Model& m,
                const std::string& task, std::uint64_t seed);

struct LoadedModel {
    nn::Model model;
    std::string task;
    std::uint64_t seed = 0;
};
// Validates on load: strictly binary planes, signs in {-1,+1}, and a
// bitwidth table consistent with the plane zero patterns (all bits at or
// above a block's bitwidth are zero over that block).
LoadedModel load_model(const std::string& path);

void save_layout(const std::string& path, const mapper::CrossbarLayout& layout);

// JSON lines, one OU event per line.
void save_trace(const std::string& path, const sim::CycleTrace& trace);

// Fixed column order:
// layer,cycles,latency_s,e_adc,e_dac,e_array,e_buffer,e_sa,e_ctrl,lut_bytes
void save_report_csv(const std::string& path, const sim::SimReport& rep);

void save_ou_sweep_csv(const std::string& path, const std::vector<sim::OuSweepRow>& rows);

} // namespace bwq::io
