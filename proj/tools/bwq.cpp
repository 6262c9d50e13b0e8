// Command-line surface for training, mapping and simulating block-wise
// mixed-precision models. Exit codes: 0 success, 2 bad config/input,
// 3 functional verification mismatch.

#include "bwq/common.hpp"
#include "bwq/kernels.hpp"
#include "bwq/model_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

using namespace bwq;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(std::stod(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (double v : parse_double_list(s)) out.push_back(static_cast<int>(v));
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_sizes(const std::string& s) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string tok = s.substr(pos, comma - pos);
        const std::size_t x = tok.find('x');
        if (x == std::string::npos) {
            throw std::runtime_error("malformed OU size '" + tok + "', expected HxW");
        }
        out.emplace_back(std::stoul(tok.substr(0, x)), std::stoul(tok.substr(x + 1)));
        pos = comma + 1;
    }
    if (out.empty()) throw std::runtime_error("empty OU size list");
    return out;
}

nn::Dataset make_task_data(const std::string& task, std::uint64_t seed, std::size_t n) {
    return task == "images" ? bwq::nn::make_images(seed, n) : bwq::nn::make_blobs(seed, n);
}

void kv(const char* key, double v) { std::printf("%s,%.9g\n", key, v); }
void kv(const char* key, unsigned long long v) { std::printf("%s,%llu\n", key, v); }

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& metrics_path, const std::string& alpha_list) {
    bwq::io::RunConfig cfg = bwq::io::load_run_config(config_path);
    std::optional<std::vector<double>> alphas;
    if (!alpha_list.empty()) alphas = parse_double_list(alpha_list);

    bwq::trainer::PipelineOutcome out = bwq::trainer::run_pipeline(cfg.train, alphas);
    bwq::io::save_model(out_path, out.model, cfg.train.task, cfg.train.seed);
    if (!metrics_path.empty()) {
        bwq::trainer::write_metrics_csv(metrics_path, out.metrics);
    }

    kv("chosen_alpha", out.chosen_alpha);
    kv("act_bits", static_cast<unsigned long long>(out.chosen_act_bits));
    kv("baseline_accuracy", out.baseline_accuracy);
    kv("accuracy", out.final_accuracy);
    auto ratios = bwq::quant::compression_ratio(out.model.bit_layers(), out.chosen_act_bits);
    kv("weight_ratio", ratios.weight_ratio);
    kv("act_ratio", ratios.act_ratio);
    if (ratios.weight_infinite) {
        std::fprintf(stderr, "warning: every weight bit was pruned; the weight "
                             "compression ratio is reported as infinite\n");
    }
    std::printf("within_budget,%s\n", out.within_budget ? "true" : "false");
    if (!out.within_budget) {
        std::fprintf(stderr,
                     "warning: first regularization step already exceeded the accuracy "
                     "budget; model is flagged out-of-budget\n");
    }
    return 0;
}

bwq::mapper::CrossbarSpec spec_for_model(const bwq::nn::Model& m,
                                         std::size_t xbar_rows, std::size_t xbar_cols) {
    bwq::mapper::CrossbarSpec spec;
    spec.xbar_rows = xbar_rows;
    spec.xbar_cols = xbar_cols;
    spec.ou_height = m.layers.front().weights.wb_grid.ou_height;
    spec.ou_width = m.layers.front().weights.wb_grid.ou_width;
    return spec;
}

int cmd_map(const std::string& model_path, const std::string& scheme_name,
            const std::string& out_path, std::size_t xbar_rows, std::size_t xbar_cols) {
    bwq::io::LoadedModel lm = bwq::io::load_model(model_path);
    bwq::mapper::Scheme scheme;
    if (scheme_name == "aware") {
        scheme = bwq::mapper::Scheme::PrecisionAware;
    } else if (scheme_name == "consecutive") {
        scheme = bwq::mapper::Scheme::Consecutive;
    } else if (scheme_name == "same-ou") {
        scheme = bwq::mapper::Scheme::SameOu;
    } else {
        throw std::runtime_error("unknown scheme '" + scheme_name + "'");
    }
    std::vector<const bwq::quant::WBGrid*> grids;
    for (const auto& l : lm.model.layers) grids.push_back(&l.weights.wb_grid);

    auto layout = bwq::mapper::layout(scheme, grids, spec_for_model(lm.model, xbar_rows, xbar_cols));
    kv("utilization", bwq::mapper::utilization(layout));
    kv("active_ous", static_cast<unsigned long long>(layout.active_ou_count()));
    kv("spare_ous", static_cast<unsigned long long>(layout.spare_ou_count()));
    if (scheme == bwq::mapper::Scheme::Consecutive) {
        kv("straddles", static_cast<unsigned long long>(layout.straddle_count));
    }
    kv("lut_bytes", static_cast<unsigned long long>(bwq::mapper::lut_bytes(grids)));
    if (!out_path.empty()) bwq::io::save_layout(out_path, layout);
    return 0;
}

int cmd_simulate(const std::string& model_path, const std::string& config_path,
                 const std::string& report_path, const std::string& trace_path,
                 bool verify, bool no_skip, std::size_t vectors) {
    bwq::io::LoadedModel lm = bwq::io::load_model(model_path);
    bwq::io::RunConfig cfg = bwq::io::load_run_config(config_path);

    const auto& g0 = lm.model.layers.front().weights.wb_grid;
    if (cfg.crossbar.ou_height != g0.ou_height || cfg.crossbar.ou_width != g0.ou_width) {
        throw std::runtime_error(
            "config OU size differs from the model's weight-block size; "
            "use sweep-ou to re-block");
    }

    std::vector<const bwq::quant::WBGrid*> grids;
    std::vector<std::string> names;
    for (const auto& l : lm.model.layers) {
        grids.push_back(&l.weights.wb_grid);
        names.push_back(l.name);
    }
    auto layout = bwq::mapper::layout_precision_aware(grids, cfg.crossbar);

    // activation batch: the task's eval stream when it matches the model's
    // input width, otherwise a seeded synthetic batch in [0, input_beta]
    const nn::Layer& l0 = lm.model.layers.front();
    const std::size_t want = l0.kind == nn::LayerKind::Conv
                                 ? l0.c_in * l0.in_h * l0.in_w
                                 : l0.c_in;
    nn::Dataset data = make_task_data(lm.task, cfg.train.seed + 0x5eedull, vectors);
    Tensor inputs = data.inputs;
    if (inputs.cols() != want) {
        Rng rng(cfg.train.seed ^ 0x51badull);
        inputs = Tensor::matrix(vectors, want);
        for (double& v : inputs.data) v = rng.uniform(0.0, lm.model.input_beta);
    }
    bwq::sim::CycleTrace annotated;
    bwq::sim::PipelineResult run = bwq::sim::simulate_model(
        lm.model, inputs, layout, cfg.hardware, !no_skip, &annotated);

    if (verify) {
        bwq::sim::PipelineResult ref = bwq::sim::reference_inference(lm.model, inputs);
        bool match = run.layer_outputs.size() == ref.layer_outputs.size();
        for (std::size_t i = 0; match && i < run.layer_outputs.size(); ++i) {
            match = run.layer_outputs[i] == ref.layer_outputs[i];
        }
        std::printf("%s\n", match ? "MATCH" : "MISMATCH");
        if (!match) return kExitVerify;
    }

    const int act_bits = lm.model.layers.front().act.act_bits;
    auto vec_counts = bwq::sim::vectors_per_layer(lm.model, vectors);
    const auto trace = bwq::sim::schedule(layout, grids, act_bits);
    auto rep = bwq::sim::report(trace, layout, grids, names, cfg.hardware, act_bits, vec_counts);

    kv("total_cycles", static_cast<unsigned long long>(rep.total.cycles));
    kv("latency_s", rep.total.latency_s);
    kv("total_energy_j", rep.total.energy.total());
    kv("adc_share", rep.total.energy.total() > 0
                        ? rep.total.energy.adc / rep.total.energy.total()
                        : 0.0);
    kv("utilization", rep.total.utilization);
    kv("lut_bytes", static_cast<unsigned long long>(rep.lut_bytes_total));
    kv("saturation_events", static_cast<unsigned long long>(run.saturation_events));
    if (!rep.ir_capacity_ok) std::fprintf(stderr, "warning: input register capacity exceeded\n");
    if (!rep.or_capacity_ok) std::fprintf(stderr, "warning: output register capacity exceeded\n");

    if (!report_path.empty()) bwq::io::save_report_csv(report_path, rep);
    if (!trace_path.empty()) bwq::io::save_trace(trace_path, annotated);
    return 0;
}

int cmd_sweep_ou(const std::string& model_path, const std::string& config_path,
                 const std::string& sizes_arg, const std::string& out_path,
                 std::size_t vectors) {
    bwq::io::LoadedModel lm = bwq::io::load_model(model_path);
    bwq::io::RunConfig cfg = bwq::io::load_run_config(config_path);
    auto sizes = parse_sizes(sizes_arg);
    auto rows = bwq::sim::ou_sweep(lm.model, sizes, cfg.crossbar, cfg.hardware, vectors);
    bwq::io::save_ou_sweep_csv(out_path, rows);
    for (const auto& r : rows) {
        std::printf("%zux%zu,bits,%zu,cycles,%llu,e_adc,%.9g\n", r.ou_height, r.ou_width,
                    r.model_bits, static_cast<unsigned long long>(r.cycles), r.energy.adc);
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& alphas_arg,
               const std::string& intervals_arg, const std::string& out_path) {
    bwq::io::RunConfig cfg = bwq::io::load_run_config(config_path);
    const auto alphas = parse_double_list(alphas_arg);
    const auto intervals = parse_int_list(intervals_arg);
    if (alphas.empty() || intervals.empty()) {
        throw std::runtime_error("ablate: need at least one alpha and one interval");
    }
    nn::Dataset train = make_task_data(cfg.train.task, cfg.train.seed, cfg.train.train_samples);
    nn::Dataset eval = make_task_data(cfg.train.task, cfg.train.seed + 0x5eedull,
                                      cfg.train.eval_samples);
    nn::Model init = bwq::nn::make_model(cfg.train.task, cfg.train.seed,
                                         cfg.train.init_weight_bits, cfg.train.init_act_bits,
                                         cfg.train.ou_height, cfg.train.ou_width);
    auto rows = bwq::trainer::ablation_sweep(init, cfg.train, alphas, intervals, train, eval);
    bwq::trainer::write_metrics_csv(out_path, rows);
    std::printf("cells,%zu\n", rows.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"block-wise mixed-precision quantization: training, mapping and "
                 "crossbar simulation"};
    app.require_subcommand(1);
    bool serial = false;
    app.add_flag("--serial", serial, "disable OpenMP kernels");

    std::string config_path, model_path, out_path, metrics_path, trace_path, report_path;
    std::string scheme = "aware", alpha_list, sizes, alphas_arg, intervals_arg;
    bool verify = false, no_skip = false;
    std::size_t vectors = 8, xbar_rows = 128, xbar_cols = 128;

    auto* train = app.add_subcommand("train", "run the quantization scheme end to end");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--out", out_path, "output model JSON")->required();
    train->add_option("--metrics", metrics_path, "sweep metrics CSV");
    train->add_option("--alpha-list", alpha_list,
                      "comma-separated regularization strengths (replaces the ladder)");

    auto* map = app.add_subcommand("map", "map a model onto crossbars");
    map->add_option("--model", model_path, "model JSON")->required();
    map->add_option("--scheme", scheme, "aware | consecutive | same-ou");
    map->add_option("--out", out_path, "layout JSON");
    map->add_option("--xbar-rows", xbar_rows, "crossbar rows");
    map->add_option("--xbar-cols", xbar_cols, "crossbar columns");

    auto* simulate = app.add_subcommand("simulate", "cycle-level simulation and report");
    simulate->add_option("--model", model_path, "model JSON")->required();
    simulate->add_option("--config", config_path, "run config JSON")->required();
    simulate->add_option("--report", report_path, "report CSV path");
    simulate->add_option("--trace", trace_path, "trace JSONL path");
    simulate->add_flag("--verify", verify, "compare against the integer matmul oracle");
    simulate->add_flag("--no-skip", no_skip,
                       "diagnostic: run the controller without the S&A skip signal");
    simulate->add_option("--vectors", vectors, "input samples to simulate");

    auto* sweep = app.add_subcommand("sweep-ou", "cycles/energy across OU sizes");
    sweep->add_option("--model", model_path, "model JSON")->required();
    sweep->add_option("--config", config_path, "run config JSON")->required();
    sweep->add_option("--sizes", sizes, "e.g. 9x8,16x16,32x32,64x64,128x128")->required();
    sweep->add_option("--out", out_path, "output CSV")->required();
    sweep->add_option("--vectors", vectors, "input samples");

    auto* ablate = app.add_subcommand("ablate", "alpha x requant-interval grid");
    ablate->add_option("--config", config_path, "run config JSON")->required();
    ablate->add_option("--alphas", alphas_arg, "comma-separated alphas")->required();
    ablate->add_option("--intervals", intervals_arg, "comma-separated intervals")->required();
    ablate->add_option("--out", out_path, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (serial) kernels::set_parallel(false);

    try {
        if (app.got_subcommand(train)) {
            return cmd_train(config_path, out_path, metrics_path, alpha_list);
        }
        if (app.got_subcommand(map)) {
            return cmd_map(model_path, scheme, out_path, xbar_rows, xbar_cols);
        }
        if (app.got_subcommand(simulate)) {
            return cmd_simulate(model_path, config_path, report_path, trace_path,
                                verify, no_skip, vectors);
        }
        if (app.got_subcommand(sweep)) {
            return cmd_sweep_ou(model_path, config_path, sizes, out_path, vectors);
        }
        if (app.got_subcommand(ablate)) {
            return cmd_ablate(config_path, alphas_arg, intervals_arg, out_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return 0;
}
