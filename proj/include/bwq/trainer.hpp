#pragma once

// Training driver: runs quantization-aware training with periodic
// re-quantization and block precision adjustment, escalates the
// regularization strength until the accuracy budget is exhausted, then
// walks the activation precision down. Weight and activation compression
// are sequenced strictly: alpha is frozen before the activation descent.

#include "bwq/nn.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bwq::trainer {

struct TrainConfig {
    std::string task = "blobs";
    std::uint64_t seed = 1;

    double delta_alpha = 2e-5;
    int init_act_bits = 8;
    int init_weight_bits = 8;
    int total_epochs = 60;
    std::set<int> requant_epochs = {20, 40};   // a final requant+adjust always runs
    double accuracy_budget = 0.01;
    double alpha_ceiling = 1.0;                // termination guard for the sweep

    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 32;
    std::size_t train_samples = 256;
    std::size_t eval_samples = 256;

    std::size_t ou_height = 9;
    std::size_t ou_width = 8;

    void validate() const;
    // smallest configured re-quantization period, for reporting
    int requant_interval() const;
};

// One row of the sweep CSV.
struct RunMetrics {
    double alpha = 0.0;
    int interval = 0;
    int act_bits = 0;
    double accuracy = 0.0;
    double weight_ratio = 0.0;
    double act_ratio = 0.0;
    std::size_t retained_bits = 0;
};

struct TrainResult {
    nn::Model model;
    double accuracy = 0.0;
    quant::CompressionRatio comp;
    std::size_t retained_bits = 0;
    // retained bit count after each requant+adjust, final included
    std::vector<std::size_t> bits_after_adjust;
};

// Trains a copy of `init` for total_epochs under (alpha, act_bits),
// re-quantizing and adjusting block precision at the configured epochs and
// once more after the last epoch. Throws on a diverged (non-finite) loss.
TrainResult train_run(const nn::Model& init, const TrainConfig& cfg,
                      double alpha, int act_bits,
                      const nn::Dataset& train, const nn::Dataset& eval);

struct SweepOutcome {
    double alpha = 0.0;
    TrainResult result;
    bool within_budget = true;
    double baseline_accuracy = 0.0;
    TrainResult baseline;              // the alpha = 0 run
    std::vector<RunMetrics> history;
};

// Restarts from the same initial weights at each alpha (0, da, 2*da, ...)
// and returns the last model within the accuracy budget. If the very first
// increment already violates the budget, that model is returned flagged.
SweepOutcome alpha_sweep(const nn::Model& init, const TrainConfig& cfg,
                         const nn::Dataset& train, const nn::Dataset& eval);

struct DescentOutcome {
    int act_bits = 0;
    TrainResult result;
    std::vector<RunMetrics> history;
};

// Lowers act_bits from init until accuracy drops more than the budget below
// baseline_accuracy; floor at 1 bit. Each step restarts from `init`.
DescentOutcome act_precision_descent(const nn::Model& init, const TrainConfig& cfg,
                                     double alpha_star, double baseline_accuracy,
                                     const TrainResult& at_init_bits,
                                     const nn::Dataset& train, const nn::Dataset& eval);

// Full-factorial (alpha, requant interval) grid; one train_run per cell.
std::vector<RunMetrics> ablation_sweep(const nn::Model& init, const TrainConfig& cfg,
                                       const std::vector<double>& alphas,
                                       const std::vector<int>& intervals,
                                       const nn::Dataset& train, const nn::Dataset& eval);

struct PipelineOutcome {
    nn::Model model;
    double chosen_alpha = 0.0;
    int chosen_act_bits = 0;
    bool within_budget = true;
    double baseline_accuracy = 0.0;
    double final_accuracy = 0.0;
    std::vector<RunMetrics> metrics;
};

// The whole scheme end to end: datasets and the initial model from
// (task, seed), alpha sweep, then activation descent with alpha frozen.
// When alpha_list is given it replaces the generated alpha ladder (an
// alpha = 0 baseline run is prepended if the list does not start with 0).
PipelineOutcome run_pipeline(const TrainConfig& cfg,
                             const std::optional<std::vector<double>>& alpha_list = {});

void write_metrics_csv(const std::string& path, const std::vector<RunMetrics>& rows);

std::set<int> epochs_from_interval(int interval, int total_epochs);

} // namespace bwq::trainer
