#include "bwq/trainer.hpp"
#include "bwq/common.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bwq::trainer {

void TrainConfig::validate() const {
    if (delta_alpha <= 0.0) throw std::invalid_argument("config: delta_alpha must be > 0");
    if (total_epochs < 1) throw std::invalid_argument("config: total_epochs must be >= 1");
    if (init_act_bits < 1 || init_act_bits > 8) {
        throw std::invalid_argument("config: init_act_bits must be in [1,8]");
    }
    if (init_weight_bits < 1 || init_weight_bits > 8) {
        throw std::invalid_argument("config: init_weight_bits must be in [1,8]");
    }
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    for (int e : requant_epochs) {
        if (e < 1 || e > total_epochs) {
            throw std::invalid_argument("config: requant_epochs must lie in [1, total_epochs]");
        }
    }
    if (task != "blobs" && task != "images") {
        throw std::invalid_argument("config: unknown task '" + task + "'");
    }
}

int TrainConfig::requant_interval() const {
    return requant_epochs.empty() ? total_epochs : *requant_epochs.begin();
}

std::set<int> epochs_from_interval(int interval, int total_epochs) {
    std::set<int> out;
    if (interval < 1) return out;
    for (int e = interval; e <= total_epochs; e += interval) out.insert(e);
    return out;
}

namespace {

RunMetrics metrics_row(const TrainConfig& cfg, double alpha, int act_bits,
                       const TrainResult& r) {
    RunMetrics m;
    m.alpha = alpha;
    m.interval = cfg.requant_interval();
    m.act_bits = act_bits;
    m.accuracy = r.accuracy;
    m.weight_ratio = r.comp.weight_ratio;
    m.act_ratio = r.comp.act_ratio;
    m.retained_bits = r.retained_bits;
    return m;
}

void requant_and_adjust(nn::Model& m, nn::OptimState& opt, TrainResult& result) {
    for (auto& layer : m.layers) {
        quant::requantize(layer.weights);
        quant::adjust_precision(layer.weights);
    }
    opt.sync_masks(m);
    result.bits_after_adjust.push_back(quant::total_retained_bits(m.bit_layers()));
}

} // namespace

TrainResult train_run(const nn::Model& init, const TrainConfig& cfg,
                      double alpha, int act_bits,
                      const nn::Dataset& train, const nn::Dataset& eval) {
    TrainResult result;
    result.model = init;
    nn::Model& model = result.model;
    model.set_act_bits(act_bits);

    nn::OptimState opt = nn::OptimState::init(model, cfg.lr, cfg.momentum,
                                              cfg.weight_decay, cfg.total_epochs);
    Rng order_rng(cfg.seed ^ 0x0adacull);

    const std::size_t n = train.inputs.rows();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
        opt.epoch = epoch - 1;
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, n - start);
            Tensor x = Tensor::matrix(bsz, train.inputs.cols());
            std::vector<int> y(bsz);
            for (std::size_t r = 0; r < bsz; ++r) {
                const std::size_t src = order[start + r];
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    x.at(r, c) = train.inputs.at(src, c);
                }
                y[r] = train.labels[src];
            }

            Tensor logits = nn::forward(model, x);
            const double ce = nn::cross_entropy(logits, y);
            const double loss = quant::total_loss(ce, model.bit_layers(), alpha);
            if (!std::isfinite(loss)) {
                throw std::runtime_error(
                    "train_run: loss diverged (epoch " + std::to_string(epoch) +
                    ", alpha " + std::to_string(alpha) + ", ce " + std::to_string(ce) + ")");
            }
            nn::Gradients g = nn::backward(model, nn::cross_entropy_grad(logits, y), alpha);
            nn::sgd_step(model, g, opt);
        }
        if (cfg.requant_epochs.count(epoch)) {
            requant_and_adjust(model, opt, result);
        }
    }
    // Precisions are finalized by one more requant+adjust after training.
    requant_and_adjust(model, opt, result);

    result.accuracy = nn::accuracy(model, eval.inputs, eval.labels);
    result.retained_bits = quant::total_retained_bits(model.bit_layers());
    result.comp = quant::compression_ratio(model.bit_layers(), act_bits);
    return result;
}

SweepOutcome alpha_sweep(const nn::Model& init, const TrainConfig& cfg,
                         const nn::Dataset& train, const nn::Dataset& eval) {
    SweepOutcome out;
    out.baseline = train_run(init, cfg, 0.0, cfg.init_act_bits, train, eval);
    out.baseline_accuracy = out.baseline.accuracy;
    out.history.push_back(metrics_row(cfg, 0.0, cfg.init_act_bits, out.baseline));

    out.alpha = 0.0;
    out.result = out.baseline;
    out.within_budget = true;

    bool first = true;
    for (double alpha = cfg.delta_alpha; alpha <= cfg.alpha_ceiling * (1 + 1e-12);
         alpha += cfg.delta_alpha) {
        TrainResult r = train_run(init, cfg, alpha, cfg.init_act_bits, train, eval);
        out.history.push_back(metrics_row(cfg, alpha, cfg.init_act_bits, r));
        if (out.baseline_accuracy - r.accuracy > cfg.accuracy_budget) {
            if (first) {
                // Budget violated at the very first increment: hand that
                // model back, flagged, rather than an untrained fallback.
                out.alpha = alpha;
                out.result = std::move(r);
                out.within_budget = false;
            }
            return out;
        }
        out.alpha = alpha;
        out.result = std::move(r);
        first = false;
    }
    return out;   // ceiling reached without violating the budget
}

DescentOutcome act_precision_descent(const nn::Model& init, const TrainConfig& cfg,
                                     double alpha_star, double baseline_accuracy,
                                     const TrainResult& at_init_bits,
                                     const nn::Dataset& train, const nn::Dataset& eval) {
    DescentOutcome out;
    out.act_bits = cfg.init_act_bits;
    out.result = at_init_bits;
    while (out.act_bits > 1) {
        const int bits = out.act_bits - 1;
        TrainResult r = train_run(init, cfg, alpha_star, bits, train, eval);
        out.history.push_back(metrics_row(cfg, alpha_star, bits, r));
        if (baseline_accuracy - r.accuracy > cfg.accuracy_budget) break;
        out.act_bits = bits;
        out.result = std::move(r);
    }
    return out;
}

std::vector<RunMetrics> ablation_sweep(const nn::Model& init, const TrainConfig& cfg,
                                       const std::vector<double>& alphas,
                                       const std::vector<int>& intervals,
                                       const nn::Dataset& train, const nn::Dataset& eval) {
    std::vector<RunMetrics> rows;
    for (double alpha : alphas) {
        for (int interval : intervals) {
            TrainConfig cell = cfg;
            cell.requant_epochs = epochs_from_interval(interval, cfg.total_epochs);
            TrainResult r = train_run(init, cell, alpha, cfg.init_act_bits, train, eval);
            RunMetrics m = metrics_row(cell, alpha, cfg.init_act_bits, r);
            m.interval = interval;
            rows.push_back(m);
        }
    }
    return rows;
}

namespace {

nn::Dataset make_task(const std::string& task, std::uint64_t seed, std::size_t samples) {
    return task == "images" ? nn::make_images(seed, samples) : nn::make_blobs(seed, samples);
}

} // namespace

PipelineOutcome run_pipeline(const TrainConfig& cfg,
                             const std::optional<std::vector<double>>& alpha_list) {
    cfg.validate();
    const nn::Dataset train = make_task(cfg.task, cfg.seed, cfg.train_samples);
    const nn::Dataset eval = make_task(cfg.task, cfg.seed + 0x5eedull, cfg.eval_samples);
    nn::Model init = nn::make_model(cfg.task, cfg.seed, cfg.init_weight_bits,
                                    cfg.init_act_bits, cfg.ou_height, cfg.ou_width);

    PipelineOutcome out;
    SweepOutcome sweep;
    if (alpha_list.has_value()) {
        // explicit ladder; still anchored by an alpha = 0 baseline
        std::vector<double> alphas = *alpha_list;
        if (alphas.empty() || alphas.front() != 0.0) {
            alphas.insert(alphas.begin(), 0.0);
        }
        sweep.baseline = train_run(init, cfg, 0.0, cfg.init_act_bits, train, eval);
        sweep.baseline_accuracy = sweep.baseline.accuracy;
        sweep.history.push_back(metrics_row(cfg, 0.0, cfg.init_act_bits, sweep.baseline));
        sweep.alpha = 0.0;
        sweep.result = sweep.baseline;
        bool first = true;
        for (std::size_t i = 1; i < alphas.size(); ++i) {
            TrainResult r = train_run(init, cfg, alphas[i], cfg.init_act_bits, train, eval);
            sweep.history.push_back(metrics_row(cfg, alphas[i], cfg.init_act_bits, r));
            if (sweep.baseline_accuracy - r.accuracy > cfg.accuracy_budget) {
                if (first) {
                    sweep.alpha = alphas[i];
                    sweep.result = std::move(r);
                    sweep.within_budget = false;
                }
                break;
            }
            sweep.alpha = alphas[i];
            sweep.result = std::move(r);
            first = false;
        }
    } else {
        sweep = alpha_sweep(init, cfg, train, eval);
    }

    out.metrics = sweep.history;
    out.chosen_alpha = sweep.alpha;
    out.within_budget = sweep.within_budget;
    out.baseline_accuracy = sweep.baseline_accuracy;

    if (!sweep.within_budget) {
        out.model = sweep.result.model;
        out.chosen_act_bits = cfg.init_act_bits;
        out.final_accuracy = sweep.result.accuracy;
        return out;
    }

    DescentOutcome desc = act_precision_descent(init, cfg, sweep.alpha,
                                                sweep.baseline_accuracy, sweep.result,
                                                train, eval);
    for (const auto& row : desc.history) out.metrics.push_back(row);
    out.model = desc.result.model;
    out.chosen_act_bits = desc.act_bits;
    out.final_accuracy = desc.result.accuracy;
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<RunMetrics>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "alpha,interval,act_bits,accuracy,weight_ratio,act_ratio,retained_bits\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g,%d,%d,%.9g,%.9g,%.9g,%zu\n",
                      r.alpha, r.interval, r.act_bits, r.accuracy,
                      r.weight_ratio, r.act_ratio, r.retained_bits);
        f << buf;
    }
}

} // namespace bwq::trainer
