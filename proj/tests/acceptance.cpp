// Acceptance suite: one check per shipping criterion, each printing a
// PASS/FAIL line. Tolerances are pinned here, in code. Returns the number
// of failed criteria.

#include "bwq/common.hpp"
#include "bwq/mapper.hpp"
#include "bwq/model_io.hpp"
#include "bwq/nn.hpp"
#include "bwq/simkernel.hpp"
#include "bwq/trainer.hpp"

#include "test_util.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

using namespace bwq;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int n, const std::string& what, const std::function<bool()>& check) {
    bool ok = false;
    std::string note;
    try {
        ok = check();
    } catch (const std::exception& e) {
        note = std::string(" (exception: ") + e.what() + ")";
    }
    std::printf("[%s] criterion %d: %s%s\n", ok ? "PASS" : "FAIL", n, what.c_str(),
                note.c_str());
    if (!ok) ++g_failures;
}

bool expect(bool cond, const char* what) {
    if (!cond) std::printf("       failed: %s\n", what);
    return cond;
}

std::vector<const quant::WBGrid*> model_grids(const nn::Model& m) {
    std::vector<const quant::WBGrid*> g;
    for (const auto& l : m.layers) g.push_back(&l.weights.wb_grid);
    return g;
}

// ---- criterion 1: the two-block schedule fixture --------------------------

bool check_fixture_schedule() {
    nn::Model m = testutil::two_block_fixture();
    mapper::CrossbarSpec spec;
    spec.xbar_rows = 4;
    spec.xbar_cols = 4;
    spec.ou_height = 2;
    spec.ou_width = 2;
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, spec);
    sim::CycleTrace trace = sim::schedule(layout, grids, 2);

    bool ok = expect(trace.events.size() == 6, "schedules in exactly 6 cycles");
    ok &= expect(layout.spare_ou_count() == 1, "one spare OU");
    // the second block's first event carries the skip signal
    ok &= expect(trace.events[4].vblock == 1 && trace.events[4].skip,
                 "skip on the second block's first event");
    for (std::size_t i = 1; i < 4; ++i) ok &= expect(!trace.events[i].skip, "no stray skips");
    // fetch_next fires exactly once, when the last vertical block completes
    for (std::size_t i = 0; i < 5; ++i) {
        ok &= expect(!trace.events[i].fetch_next, "no early fetch_next");
    }
    ok &= expect(trace.events[5].fetch_next && trace.events[5].vblock == 1,
                 "fetch_next on vertical-block completion");
    return ok;
}

// ---- criterion 2: functional equivalence over 50 random models -------------

bool check_oracle_equivalence() {
    sim::HardwareConfig hw;
    for (int seed = 1; seed <= 50; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed) * 7919);
        nn::Model m = testutil::random_binary_model(rng, seed % 2 == 0);
        auto grids = model_grids(m);
        auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
        const std::size_t width = m.layers[0].kind == nn::LayerKind::Conv
                                      ? 36u
                                      : m.layers[0].c_in;
        Tensor inputs = testutil::random_inputs(rng, 5, width, m.input_beta);
        auto sim_run = sim::simulate_model(m, inputs, layout, hw);
        auto ref_run = sim::reference_inference(m, inputs);
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            if (!(sim_run.layer_outputs[li] == ref_run.layer_outputs[li])) {
                std::printf("       seed %d layer %zu diverged\n", seed, li);
                return false;
            }
        }
    }
    return true;
}

// ---- criterion 3: gradient suite -------------------------------------------

bool check_gradients() {
    nn::Model m;
    Tensor x;
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    double margin = 0.0;
    for (std::uint64_t seed = 1; margin < 2e-3; ++seed) {
        if (seed > 50) return expect(false, "no kink-free seed found");
        m = nn::make_model("blobs", seed, 8, 8, 9, 8);
        m.layers[0].act.beta = 1.0;
        Rng rng(seed ^ 0xabcll);
        testutil::soften_planes(m, rng);
        x = testutil::random_inputs(rng, 6, 2, 5.0);
        Tensor logits = nn::forward(m, x, {.quantize_acts = false});
        margin = 1e9;
        for (double z : m.cache[0].z_flat.data) {
            margin = std::min(margin, std::min(std::fabs(z), std::fabs(z - 1.0)));
        }
    }

    const double alpha = 2e-3;
    auto loss = [&] {
        Tensor logits = nn::forward(m, x, {.quantize_acts = false});
        return quant::total_loss(nn::cross_entropy(logits, labels), m.bit_layers(), alpha);
    };
    Tensor logits = nn::forward(m, x, {.quantize_acts = false});
    nn::Gradients g = nn::backward(m, nn::cross_entropy_grad(logits, labels), alpha);

    Rng pick(4242);
    bool ok = true;
    int planes_checked = 0;
    while (planes_checked < 10) {
        const std::size_t li = pick.index(m.layers.size());
        auto& w = m.layers[li].weights;
        const int b = pick.int_in(0, w.n - 1);
        const std::size_t i = pick.index(w.rows), j = pick.index(w.cols);
        double* p = &w.bit_planes[static_cast<std::size_t>(b)].at(i, j);
        if (*p < 0.02 || *p > 0.98) continue;   // keep the probe inside [0,1]
        const double fd = testutil::finite_diff(loss, p);
        const double an = g.layers[li].planes[static_cast<std::size_t>(b)].at(i, j);
        ok &= expect(testutil::rel_err(fd, an) <= 1e-4, "bit-plane gradient");
        ++planes_checked;
    }
    for (int t = 0; t < 10; ++t) {
        const std::size_t li = pick.index(m.layers.size());
        const std::size_t j = pick.index(m.layers[li].bias.numel());
        const double fd = testutil::finite_diff(loss, &m.layers[li].bias[j]);
        ok &= expect(testutil::rel_err(fd, g.layers[li].bias[j]) <= 1e-4, "bias gradient");
    }
    for (int t = 0; t < 10; ++t) {
        const double fd = testutil::finite_diff(loss, &m.layers[0].act.beta);
        ok &= expect(testutil::rel_err(fd, g.layers[0].beta) <= 1e-4, "clip-level gradient");
    }
    return ok;
}

// ---- criterion 4: monotone sparsity and mask permanence ---------------------

bool check_monotone_sparsity() {
    trainer::TrainConfig cfg;
    cfg.seed = 3;
    cfg.total_epochs = 24;
    cfg.requant_epochs = {6, 12, 18, 24};
    cfg.train_samples = 128;
    cfg.eval_samples = 128;
    nn::Dataset train = nn::make_blobs(cfg.seed, 128);
    nn::Dataset eval = nn::make_blobs(cfg.seed + 0x5eed, 128);
    nn::Model init = nn::make_model("blobs", cfg.seed, 8, 8, 9, 8);
    trainer::TrainResult r = trainer::train_run(init, cfg, 4e-4, 8, train, eval);

    bool ok = expect(r.bits_after_adjust.size() >= 4, "adjustments recorded");
    for (std::size_t i = 1; i < r.bits_after_adjust.size(); ++i) {
        ok &= expect(r.bits_after_adjust[i] <= r.bits_after_adjust[i - 1],
                     "retained bits never increase");
    }

    nn::Model m = r.model;
    nn::OptimState opt = nn::OptimState::init(m, 0.05, 0.9, 1e-4, 20);
    for (int step = 0; step < 20; ++step) {
        Tensor logits = nn::forward(m, train.inputs);
        nn::Gradients g =
            nn::backward(m, nn::cross_entropy_grad(logits, train.labels), 4e-4);
        nn::sgd_step(m, g, opt);
    }
    for (const auto& layer : m.layers) {
        const auto& grid = layer.weights.wb_grid;
        for (std::size_t vb = 0; vb < grid.num_vblock; ++vb) {
            for (std::size_t hb = 0; hb < grid.num_hblock; ++hb) {
                for (int b = 0; b < layer.weights.n; ++b) {
                    if (grid.mask(vb, hb, b)) continue;
                    for (std::size_t i = grid.row_begin(vb); i < grid.row_end(vb); ++i) {
                        for (std::size_t j = grid.col_begin(hb); j < grid.col_end(hb); ++j) {
                            if (layer.weights.bit_planes[static_cast<std::size_t>(b)]
                                    .at(i, j) != 0.0) {
                                return expect(false, "masked plane bit resurfaced");
                            }
                        }
                    }
                }
            }
        }
    }
    return ok;
}

// ---- criterion 5: mapping fixtures ------------------------------------------

bool check_mapping_fixtures() {
    // one 4x4 block at 3 bits, 4x4 OUs on a 4x16 crossbar
    quant::WBGrid g = quant::partition(4, 4, 4, 4, 4);
    g.set_mask(0, 0, 3, 0);
    g.recompute_bitwidths();
    mapper::CrossbarSpec spec;
    spec.xbar_rows = 4;
    spec.xbar_cols = 16;
    spec.ou_height = 4;
    spec.ou_width = 4;

    auto aware = mapper::layout_precision_aware({&g}, spec);
    bool ok = expect(mapper::utilization(aware) == 1.0, "precision-aware utilization 1.0");
    ok &= expect(aware.active_ou_count() == 3, "3 active OUs for a 3-bit block");

    auto same = mapper::layout_same_ou({&g}, spec);
    ok &= expect(mapper::utilization(same) == 0.75, "same-OU utilization 0.75");

    // active OUs equal the summed bitwidth table on a random layer
    Rng rng(404);
    quant::BitLayer l = testutil::random_binary_bitlayer(rng, 40, 30, 8, 9, 8);
    auto lay = mapper::layout_precision_aware({&l.wb_grid}, mapper::CrossbarSpec{});
    std::size_t bw_sum = 0;
    for (std::size_t vb = 0; vb < l.wb_grid.num_vblock; ++vb) {
        for (std::size_t hb = 0; hb < l.wb_grid.num_hblock; ++hb) {
            bw_sum += static_cast<std::size_t>(l.wb_grid.bitwidth(vb, hb));
        }
    }
    ok &= expect(lay.active_ou_count() == bw_sum, "active OUs = sum of bitwidths");
    return ok;
}

// ---- criterion 6: desk-scale compression through the CLI --------------------

bool check_desk_compression() {
    const fs::path dir = fs::temp_directory_path() / "bwq_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cfg = (dir / "cfg.json").string();
    std::ofstream(cfg) << R"({ "task": "blobs", "seed": 1 })";

    const std::string cmd = std::string(BWQ_CLI_PATH) + " train --config " + cfg +
                            " --out " + (dir / "model.json").string() + " --metrics " +
                            (dir / "metrics.csv").string() + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return expect(false, "could not launch the CLI");
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    const int status = pclose(pipe);
    bool ok = expect(WIFEXITED(status) && WEXITSTATUS(status) == 0, "train exits cleanly");

    auto grab = [&](const std::string& key) {
        const auto pos = out.find(key + ",");
        if (pos == std::string::npos) return std::nan("");
        return std::stod(out.substr(pos + key.size() + 1));
    };
    const double ratio = grab("weight_ratio");
    const double base = grab("baseline_accuracy");
    const double acc = grab("accuracy");
    std::printf("       weight_ratio %.2f, baseline %.4f, final %.4f\n", ratio, base, acc);
    // >= 4x over the 8-bit starting point = >= 16x over the 32-bit baseline
    ok &= expect(ratio >= 16.0, "weight compression >= 16x over 32-bit");
    ok &= expect(base - acc <= 0.01, "accuracy loss <= 1% vs the alpha=0 run");
    fs::remove_all(dir);
    return ok;
}

// ---- criterion 7: energy structure ------------------------------------------

bool check_energy_structure() {
    bool ok = true;
    sim::HardwareConfig hw;
    // ADC share on both desk tasks, trained briefly
    for (const std::string task : {"blobs", "images"}) {
        trainer::TrainConfig cfg;
        cfg.task = task;
        cfg.total_epochs = 10;
        cfg.requant_epochs = {5};
        cfg.train_samples = 96;
        cfg.eval_samples = 96;
        nn::Dataset train = task == "images" ? nn::make_images(1, 96) : nn::make_blobs(1, 96);
        nn::Dataset eval =
            task == "images" ? nn::make_images(77, 96) : nn::make_blobs(77, 96);
        nn::Model init = nn::make_model(task, 1, 8, 8, 9, 8);
        trainer::TrainResult r = trainer::train_run(init, cfg, 1e-4, 8, train, eval);

        auto grids = model_grids(r.model);
        auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
        sim::CycleTrace trace = sim::schedule(layout, grids, 8);
        std::vector<std::string> names;
        for (const auto& l : r.model.layers) names.push_back(l.name);
        auto rep = sim::report(trace, layout, grids, names, hw, 8,
                               sim::vectors_per_layer(r.model, 8));
        const double share = rep.total.energy.adc / rep.total.energy.total();
        std::printf("       %s ADC share %.3f\n", task.c_str(), share);
        ok &= expect(share >= 0.5, "ADC at least half of dynamic energy");
    }

    // exact act-bit linearity
    Rng rng(505);
    quant::BitLayer l = testutil::random_binary_bitlayer(rng, 18, 16, 8, 9, 8);
    auto layout = mapper::layout_precision_aware({&l.wb_grid}, mapper::CrossbarSpec{});
    sim::CycleTrace t1 = sim::schedule(layout, {&l.wb_grid}, 4);
    sim::CycleTrace t2 = sim::schedule(layout, {&l.wb_grid}, 8);
    auto r1 = sim::report(t1, layout, {&l.wb_grid}, {"fc"}, hw, 4, {16});
    auto r2 = sim::report(t2, layout, {&l.wb_grid}, {"fc"}, hw, 8, {16});
    ok &= expect(r2.total.cycles == 2 * r1.total.cycles, "doubling act bits doubles cycles");
    ok &= expect(r2.total.energy.adc == 2.0 * r1.total.energy.adc,
                 "doubling act bits doubles ADC energy exactly");
    return ok;
}

// ---- criterion 8: OU-size sweep trends ---------------------------------------

bool check_ou_sweep() {
    trainer::TrainConfig cfg;
    cfg.total_epochs = 16;
    cfg.requant_epochs = {8};
    cfg.train_samples = 128;
    cfg.eval_samples = 128;
    nn::Dataset train = nn::make_blobs(1, 128);
    nn::Dataset eval = nn::make_blobs(77, 128);
    nn::Model init = nn::make_model("blobs", 1, 8, 8, 9, 8);
    trainer::TrainResult r = trainer::train_run(init, cfg, 3e-4, 8, train, eval);

    auto rows = sim::ou_sweep(r.model,
                              {{9, 8}, {16, 16}, {32, 32}, {64, 64}, {128, 128}},
                              mapper::CrossbarSpec{}, sim::HardwareConfig{}, 8);
    bool ok = expect(rows.size() == 5, "five sweep rows");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ok &= expect(rows[i].model_bits >= rows[i - 1].model_bits,
                     "retained bits non-decreasing with OU size");
        ok &= expect(rows[i].energy.adc > rows[i - 1].energy.adc,
                     "ADC energy strictly increasing with OU size");
    }
    return ok;
}

// ---- criterion 9: LUT accounting ---------------------------------------------

bool check_lut_accounting() {
    bool ok = true;
    // (a) one 9x8 layer: one 4-bit entry -> 1 byte
    quant::WBGrid a = quant::partition(9, 8, 9, 8, 8);
    ok &= expect(mapper::lut_bytes({&a}) == 1, "single block rounds to one byte");

    // (b) the blobs MLP: (1x6 + 6x1) entries x 4 bits = 48 bits -> 6 bytes
    nn::Model blobs = nn::make_model("blobs", 1, 8, 8, 9, 8);
    ok &= expect(mapper::lut_bytes(model_grids(blobs)) == 6, "blobs MLP LUT is 6 bytes");

    // (c) stacked fixture: 27x8 -> 3, 72x8 -> 8, 128x10 -> 30 entries;
    // 41 entries x 4 bits = 164 bits -> 21 bytes
    quant::WBGrid c1 = quant::partition(27, 8, 9, 8, 8);
    quant::WBGrid c2 = quant::partition(72, 8, 9, 8, 8);
    quant::WBGrid c3 = quant::partition(128, 10, 9, 8, 8);
    ok &= expect(mapper::lut_bytes({&c1, &c2, &c3}) == 21, "three-layer LUT is 21 bytes");
    return ok;
}

} // namespace

int main() {
    std::printf("acceptance suite\n----------------\n");
    criterion(1, "two-block fixture schedules in 6 cycles with skip/fetch_next",
              check_fixture_schedule);
    criterion(2, "crossbar execution matches the integer oracle on 50 random models",
              check_oracle_equivalence);
    criterion(3, "analytic gradients match central finite differences (rel. 1e-4)",
              check_gradients);
    criterion(4, "retained bits monotone; masked planes pinned at zero",
              check_monotone_sparsity);
    criterion(5, "mapping fixtures: utilization 1.0 / 0.75 and OU counts",
              check_mapping_fixtures);
    criterion(6, "desk-scale training compresses >= 16x within a 1% accuracy budget",
              check_desk_compression);
    criterion(7, "ADC dominates energy; act-bit doubling is exactly linear",
              check_energy_structure);
    criterion(8, "OU sweep: bits non-decreasing, ADC energy strictly increasing",
              check_ou_sweep);
    criterion(9, "controller LUT byte counts match the closed-form sums",
              check_lut_accounting);
    std::printf("----------------\n%s (%d failure%s)\n",
                g_failures == 0 ? "ALL CRITERIA PASS" : "CRITERIA FAILED", g_failures,
                g_failures == 1 ? "" : "s");
    return g_failures;
}
