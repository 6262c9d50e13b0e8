#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bwq/common.hpp"
#include "bwq/kernels.hpp"
#include "bwq/simkernel.hpp"

#include "test_util.hpp"

#include <cmath>

using namespace bwq;
using namespace bwq::sim;

namespace {

mapper::CrossbarSpec fixture_spec() {
    mapper::CrossbarSpec s;
    s.xbar_rows = 4;
    s.xbar_cols = 4;
    s.ou_height = 2;
    s.ou_width = 2;
    return s;
}

std::vector<const quant::WBGrid*> model_grids(const nn::Model& m) {
    std::vector<const quant::WBGrid*> g;
    for (const auto& l : m.layers) g.push_back(&l.weights.wb_grid);
    return g;
}

// literal walk of the controller loops, counting cycles only
std::uint64_t cycle_oracle(const quant::WBGrid& g, int act_bits) {
    std::uint64_t cycles = 0;
    for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            const int bw = g.bitwidth(vb, hb);
            if (bw == 0) continue;
            for (int a = 0; a < act_bits; ++a) {
                for (int k = 0; k < bw; ++k) ++cycles;
            }
        }
    }
    return cycles;
}

} // namespace

TEST_CASE("two stacked blocks with 2-bit activations schedule in 6 cycles") {
    nn::Model m = testutil::two_block_fixture();
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, fixture_spec());
    CycleTrace trace = schedule(layout, grids, 2);

    REQUIRE(trace.events.size() == 6);
    CHECK(trace.cycles_per_crossbar[0] == 6);

    // events 1-4: upper block (both weight bits x both act bits),
    // events 5-6: lower block (one weight bit x both act bits)
    CHECK(trace.events[0].skip);
    CHECK(trace.events[0].vblock == 0);
    CHECK(trace.events[0].weight_bit == 1);
    CHECK(trace.events[0].act_bit == 1);
    for (std::size_t i = 1; i < 4; ++i) {
        CHECK_FALSE(trace.events[i].skip);
        CHECK(trace.events[i].vblock == 0);
    }
    // the second block's first event carries the skip signal
    CHECK(trace.events[4].skip);
    CHECK(trace.events[4].vblock == 1);
    CHECK(trace.events[4].weight_bit == 0);
    // fetch_next exactly on completion of the stripe's last vertical block
    for (std::size_t i = 0; i < 5; ++i) CHECK_FALSE(trace.events[i].fetch_next);
    CHECK(trace.events[5].fetch_next);

    // the spare OU at row band 1, column 1 never produces an event
    for (const auto& e : trace.events) {
        const bool touches_spare = e.row_begin == 2 && e.col_begin == 2;
        CHECK_FALSE(touches_spare);
    }
}

TEST_CASE("all-zero bitwidths produce an empty trace") {
    quant::WBGrid g = quant::partition(4, 2, 2, 2, 2);
    for (std::size_t vb = 0; vb < 2; ++vb) {
        for (int b = 0; b < 2; ++b) g.set_mask(vb, 0, b, 0);
    }
    g.recompute_bitwidths();
    auto layout = mapper::layout_precision_aware({&g}, fixture_spec());
    CycleTrace trace = schedule(layout, {&g}, 3);
    CHECK(trace.events.empty());
    CHECK(trace.total_cycles() == 0);
}

TEST_CASE("schedule rejects non-precision-aware layouts and mismatched grids") {
    nn::Model m = testutil::two_block_fixture();
    auto grids = model_grids(m);
    auto consec = mapper::layout_consecutive(grids, fixture_spec());
    CHECK_THROWS_AS(schedule(consec, grids, 2), std::invalid_argument);

    auto layout = mapper::layout_precision_aware(grids, fixture_spec());
    quant::WBGrid other = quant::partition(9, 8, 9, 8, 8);
    std::vector<const quant::WBGrid*> wrong = {&other};
    CHECK_THROWS_AS(schedule(layout, wrong, 2), std::invalid_argument);
}

TEST_CASE("cycle count equals act_bits x active OUs, against the loop oracle") {
    Rng rng(51);
    for (int trial = 0; trial < 8; ++trial) {
        quant::BitLayer l = testutil::random_binary_bitlayer(
            rng, 4 + rng.index(40), 2 + rng.index(20), 8, 9, 8);
        const int act_bits = 1 + static_cast<int>(rng.index(8));
        auto layout = mapper::layout_precision_aware({&l.wb_grid}, mapper::CrossbarSpec{});
        CycleTrace trace = schedule(layout, {&l.wb_grid}, act_bits);

        std::uint64_t active = layout.active_ou_count();
        CHECK(trace.total_cycles() == static_cast<std::uint64_t>(act_bits) * active);
        CHECK(trace.total_cycles() == cycle_oracle(l.wb_grid, act_bits));
    }
}

TEST_CASE("execute: all-zero activations give all-zero outputs") {
    nn::Model m = testutil::two_block_fixture();
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, fixture_spec());
    CycleTrace trace = schedule(layout, grids, 2);
    IntMat codes(3, 4);   // zeros
    HardwareConfig hw;
    auto out = execute_layer(trace, 0, m.layers[0].weights, codes, hw);
    for (long long v : out.outputs.v) CHECK(v == 0);
    CHECK(out.saturation_events == 0);
}

TEST_CASE("execute: 1-bit weights and activations reduce to a binary matvec") {
    Rng rng(55);
    quant::BitLayer l = testutil::random_binary_bitlayer(rng, 6, 4, 1, 3, 2);
    mapper::CrossbarSpec spec;
    spec.xbar_rows = 6;
    spec.xbar_cols = 8;
    spec.ou_height = 3;
    spec.ou_width = 2;
    auto layout = mapper::layout_precision_aware({&l.wb_grid}, spec);
    CycleTrace trace = schedule(layout, {&l.wb_grid}, 1);

    IntMat codes(5, 6);
    for (auto& v : codes.v) v = static_cast<long long>(rng.index(2));
    HardwareConfig hw;
    auto got = execute_layer(trace, 0, l, codes, hw);
    CHECK(got.outputs == reference_layer(l, codes));
}

TEST_CASE("execute equals the integer matmul oracle on random pipelines") {
    Rng rng(57);
    HardwareConfig hw;
    for (int trial = 0; trial < 6; ++trial) {
        nn::Model m = testutil::random_binary_model(rng, trial % 2 == 1);
        auto grids = model_grids(m);
        auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
        Tensor inputs = testutil::random_inputs(
            rng, 4, m.layers[0].kind == nn::LayerKind::Conv ? 36u : m.layers[0].c_in,
            m.input_beta);
        auto sim_run = simulate_model(m, inputs, layout, hw);
        auto ref_run = reference_inference(m, inputs);
        REQUIRE(sim_run.layer_outputs.size() == ref_run.layer_outputs.size());
        for (std::size_t i = 0; i < sim_run.layer_outputs.size(); ++i) {
            CHECK(sim_run.layer_outputs[i] == ref_run.layer_outputs[i]);
        }
        CHECK(sim_run.logits.data == ref_run.logits.data);
    }
}

TEST_CASE("split block runs across crossbars still match the oracle") {
    // 64x64 OUs on a 128x128 crossbar leave two OU columns per crossbar, so
    // an 8-bit block's run spans four crossbars
    Rng rng(59);
    quant::BitLayer l = testutil::random_binary_bitlayer(rng, 10, 5, 8, 64, 64);
    mapper::CrossbarSpec spec;
    spec.ou_height = 64;
    spec.ou_width = 64;
    auto layout = mapper::layout_precision_aware({&l.wb_grid}, spec);
    REQUIRE(layout.crossbars.size() >= 2);
    CycleTrace trace = schedule(layout, {&l.wb_grid}, 3);
    HardwareConfig hw;
    hw.adc_bits = adc_bits_for(64);
    IntMat codes(4, 10);
    for (auto& v : codes.v) v = static_cast<long long>(rng.index(8));
    auto got = execute_layer(trace, 0, l, codes, hw);
    CHECK(got.outputs == reference_layer(l, codes));
}

TEST_CASE("disabling the skip signal breaks equivalence on stacked blocks") {
    nn::Model m = testutil::two_block_fixture();
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, fixture_spec());
    Rng rng(61);
    Tensor inputs = testutil::random_inputs(rng, 6, 4, m.input_beta);
    HardwareConfig hw;

    auto honest = simulate_model(m, inputs, layout, hw, true);
    auto ref_run = reference_inference(m, inputs);
    CHECK(honest.layer_outputs[0] == ref_run.layer_outputs[0]);

    auto broken = simulate_model(m, inputs, layout, hw, false);
    CHECK_FALSE(broken.layer_outputs[0] == ref_run.layer_outputs[0]);
}

TEST_CASE("annotated trace carries shift-add register states") {
    nn::Model m = testutil::two_block_fixture();
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, fixture_spec());
    Rng rng(63);
    Tensor inputs = testutil::random_inputs(rng, 2, 4, m.input_beta);
    HardwareConfig hw;
    CycleTrace annotated;
    simulate_model(m, inputs, layout, hw, true, &annotated);

    REQUIRE(annotated.events.size() == 6);
    for (const auto& e : annotated.events) {
        REQUIRE(e.adc_outputs.size() == 2);
        REQUIRE(e.psum_after.size() == 2);
    }
    // psum follows the shift-left accumulation within each block run
    const auto& ev = annotated.events;
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(ev[0].psum_after[c] == ev[0].adc_outputs[c]);
        CHECK(ev[1].psum_after[c] == 2 * ev[0].psum_after[c] + ev[1].adc_outputs[c]);
        // a fresh activation bit restarts the register
        CHECK(ev[2].psum_after[c] == ev[2].adc_outputs[c]);
    }
}

TEST_CASE("report: empty trace has zero cycles and zero dynamic energy") {
    quant::WBGrid g = quant::partition(4, 2, 2, 2, 2);
    for (std::size_t vb = 0; vb < 2; ++vb) {
        for (int b = 0; b < 2; ++b) g.set_mask(vb, 0, b, 0);
    }
    g.recompute_bitwidths();
    auto layout = mapper::layout_precision_aware({&g}, fixture_spec());
    CycleTrace trace = schedule(layout, {&g}, 2);
    HardwareConfig hw;
    hw.adc_bits = 4;
    auto rep = report(trace, layout, {&g}, {"fc"}, hw, 2, {1});
    CHECK(rep.total.cycles == 0);
    CHECK(rep.total.energy.adc == 0.0);
    CHECK(rep.total.latency_s == 0.0);
}

TEST_CASE("doubling act_bits exactly doubles cycles and ADC energy") {
    Rng rng(65);
    quant::BitLayer l = testutil::random_binary_bitlayer(rng, 18, 16, 8, 9, 8);
    auto layout = mapper::layout_precision_aware({&l.wb_grid}, mapper::CrossbarSpec{});
    HardwareConfig hw;
    for (int bits : {1, 2, 4}) {
        CycleTrace t1 = schedule(layout, {&l.wb_grid}, bits);
        CycleTrace t2 = schedule(layout, {&l.wb_grid}, 2 * bits);
        auto r1 = report(t1, layout, {&l.wb_grid}, {"fc"}, hw, bits, {16});
        auto r2 = report(t2, layout, {&l.wb_grid}, {"fc"}, hw, 2 * bits, {16});
        CHECK(r2.total.cycles == 2 * r1.total.cycles);
        CHECK(r2.total.energy.adc == 2.0 * r1.total.energy.adc);
    }
}

TEST_CASE("ADC dominates dynamic energy on desk models") {
    Rng rng(67);
    for (int trial = 0; trial < 4; ++trial) {
        nn::Model m = testutil::random_binary_model(rng, trial % 2 == 1);
        auto grids = model_grids(m);
        auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
        const int act_bits = m.layers.front().act.act_bits;
        CycleTrace trace = schedule(layout, grids, act_bits);
        if (trace.events.empty()) continue;
        HardwareConfig hw;
        std::vector<std::string> names;
        for (const auto& l : m.layers) names.push_back(l.name);
        auto rep = report(trace, layout, grids, names, hw, act_bits,
                          vectors_per_layer(m, 8));
        CHECK(rep.total.energy.adc / rep.total.energy.total() >= 0.5);
        // additivity
        double sum = 0;
        for (const auto& lr : rep.layers) sum += lr.energy.total();
        CHECK(rep.total.energy.total() == doctest::Approx(sum).epsilon(1e-12));
    }
}

TEST_CASE("ou_sweep: single size equals the plain report") {
    Rng rng71(71);
    nn::Model m = testutil::random_binary_model(rng71, false);
    // re-block at the default OU size for a like-for-like comparison
    auto rows = ou_sweep(m, {{9, 8}}, mapper::CrossbarSpec{}, HardwareConfig{}, 4);
    REQUIRE(rows.size() == 1);

    std::vector<quant::BitLayer> relayers;
    std::vector<const quant::WBGrid*> grids;
    for (const auto& l : m.layers) {
        quant::BitLayer tmp = l.weights;
        tmp.wb_grid = quant::partition(tmp.rows, tmp.cols, 9, 8, tmp.n);
        quant::adjust_precision(tmp);
        relayers.push_back(std::move(tmp));
    }
    for (const auto& rl : relayers) grids.push_back(&rl.wb_grid);
    auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
    const int act_bits = m.layers.front().act.act_bits;
    CycleTrace trace = schedule(layout, grids, act_bits);
    auto rep = report(trace, layout, grids, {"a", "b"}, HardwareConfig{}, act_bits,
                      vectors_per_layer(m, 4));
    CHECK(rows[0].cycles == rep.total.cycles);
    CHECK(rows[0].energy.adc == doctest::Approx(rep.total.energy.adc));
}

TEST_CASE("ou_sweep trends: retained bits non-decreasing, ADC strictly increasing") {
    Rng rng73(73);
    nn::Model m = testutil::random_binary_model(rng73, false);
    std::vector<std::pair<std::size_t, std::size_t>> sizes = {
        {9, 8}, {16, 16}, {32, 32}, {64, 64}, {128, 128}};
    auto rows = ou_sweep(m, sizes, mapper::CrossbarSpec{}, HardwareConfig{}, 4);
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].model_bits >= rows[i - 1].model_bits);
        CHECK(rows[i].energy.adc > rows[i - 1].energy.adc);
    }
}

TEST_CASE("ou_sweep rejects sizes larger than the crossbar") {
    Rng rng75(75);
    nn::Model m = testutil::random_binary_model(rng75, false);
    CHECK_THROWS_AS(ou_sweep(m, {{256, 8}}, mapper::CrossbarSpec{}, HardwareConfig{}, 2),
                    std::invalid_argument);
}

TEST_CASE("hardware config validation") {
    HardwareConfig hw;
    hw.adc_bits = 3;   // 9 concurrent rows need 4 bits
    CHECK_THROWS_AS(hw.validate(9), std::invalid_argument);
    CHECK(adc_bits_for(9) == 4);
    CHECK(adc_bits_for(16) == 5);
    CHECK(adc_bits_for(128) == 8);
}

TEST_CASE("crossbar parallelism does not change results") {
    Rng rng(77);
    nn::Model m = testutil::random_binary_model(rng, false);
    auto grids = model_grids(m);
    auto layout = mapper::layout_precision_aware(grids, mapper::CrossbarSpec{});
    Tensor inputs = testutil::random_inputs(rng, 16, m.layers[0].c_in, m.input_beta);
    HardwareConfig hw;

    kernels::set_parallel(false);
    auto serial_run = simulate_model(m, inputs, layout, hw);
    kernels::set_parallel(true);
    auto parallel_run = simulate_model(m, inputs, layout, hw);
    REQUIRE(serial_run.layer_outputs.size() == parallel_run.layer_outputs.size());
    for (std::size_t i = 0; i < serial_run.layer_outputs.size(); ++i) {
        CHECK(serial_run.layer_outputs[i] == parallel_run.layer_outputs[i]);
    }
}
