#include "bwq/model_io.hpp"
#include "bwq/common.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace bwq::io {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    ordered_json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": invalid JSON: " + e.what());
    }
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
}

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw std::runtime_error("unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void get_if(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ordered_json matrix_to_json(const Tensor& t, bool as_int) {
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (as_int) {
                row.push_back(static_cast<long long>(t.at(i, j)));
            } else {
                row.push_back(t.at(i, j));
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Tensor matrix_from_json(const ordered_json& j, std::size_t rows, std::size_t cols,
                        const std::string& what) {
    if (!j.is_array() || j.size() != rows) {
        throw std::runtime_error(what + ": expected " + std::to_string(rows) + " rows");
    }
    Tensor t = Tensor::matrix(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != cols) {
            throw std::runtime_error(what + ": row " + std::to_string(i) + " has wrong width");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            t.at(i, c) = row[c].get<double>();
        }
    }
    return t;
}

} // namespace

RunConfig load_run_config(const std::string& path) {
    const ordered_json j = read_json(path);
    check_keys(j, {"task", "seed", "train", "hardware", "crossbar"}, "config");

    RunConfig cfg;
    get_if(j, "task", cfg.train.task);
    get_if(j, "seed", cfg.train.seed);

    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t,
                   {"delta_alpha", "init_act_bits", "init_weight_bits", "total_epochs",
                    "requant_epochs", "accuracy_budget", "alpha_ceiling", "lr", "momentum",
                    "weight_decay", "batch_size", "train_samples", "eval_samples"},
                   "config.train");
        get_if(t, "delta_alpha", cfg.train.delta_alpha);
        get_if(t, "init_act_bits", cfg.train.init_act_bits);
        get_if(t, "init_weight_bits", cfg.train.init_weight_bits);
        get_if(t, "total_epochs", cfg.train.total_epochs);
        if (t.contains("requant_epochs")) {
            cfg.train.requant_epochs.clear();
            for (const auto& e : t.at("requant_epochs")) {
                cfg.train.requant_epochs.insert(e.get<int>());
            }
        }
        get_if(t, "accuracy_budget", cfg.train.accuracy_budget);
        get_if(t, "alpha_ceiling", cfg.train.alpha_ceiling);
        get_if(t, "lr", cfg.train.lr);
        get_if(t, "momentum", cfg.train.momentum);
        get_if(t, "weight_decay", cfg.train.weight_decay);
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "train_samples", cfg.train.train_samples);
        get_if(t, "eval_samples", cfg.train.eval_samples);
    }
    if (j.contains("hardware")) {
        const auto& h = j.at("hardware");
        check_keys(h,
                   {"frequency", "adc_bits", "dac_bits", "e_adc_convert", "e_dac_per_row",
                    "e_array_mac_per_ou", "e_buffer_read_per_bit", "e_buffer_write_per_bit",
                    "e_shift_add", "e_controller_per_cycle", "adc_energy_scale_per_bit",
                    "output_bits", "ir_bytes", "or_bytes"},
                   "config.hardware");
        get_if(h, "frequency", cfg.hardware.frequency);
        get_if(h, "adc_bits", cfg.hardware.adc_bits);
        get_if(h, "dac_bits", cfg.hardware.dac_bits);
        get_if(h, "e_adc_convert", cfg.hardware.e_adc_convert);
        get_if(h, "e_dac_per_row", cfg.hardware.e_dac_per_row);
        get_if(h, "e_array_mac_per_ou", cfg.hardware.e_array_mac_per_ou);
        get_if(h, "e_buffer_read_per_bit", cfg.hardware.e_buffer_read_per_bit);
        get_if(h, "e_buffer_write_per_bit", cfg.hardware.e_buffer_write_per_bit);
        get_if(h, "e_shift_add", cfg.hardware.e_shift_add);
        get_if(h, "e_controller_per_cycle", cfg.hardware.e_controller_per_cycle);
        get_if(h, "adc_energy_scale_per_bit", cfg.hardware.adc_energy_scale_per_bit);
        get_if(h, "output_bits", cfg.hardware.output_bits);
        get_if(h, "ir_bytes", cfg.hardware.ir_bytes);
        get_if(h, "or_bytes", cfg.hardware.or_bytes);
    }
    if (j.contains("crossbar")) {
        const auto& c = j.at("crossbar");
        check_keys(c, {"xbar_rows", "xbar_cols", "ou_height", "ou_width", "bits_per_cell"},
                   "config.crossbar");
        get_if(c, "xbar_rows", cfg.crossbar.xbar_rows);
        get_if(c, "xbar_cols", cfg.crossbar.xbar_cols);
        get_if(c, "ou_height", cfg.crossbar.ou_height);
        get_if(c, "ou_width", cfg.crossbar.ou_width);
        get_if(c, "bits_per_cell", cfg.crossbar.bits_per_cell);
    }
    cfg.train.ou_height = cfg.crossbar.ou_height;
    cfg.train.ou_width = cfg.crossbar.ou_width;
    cfg.train.validate();
    cfg.crossbar.validate();
    cfg.hardware.validate(cfg.crossbar.ou_height);
    return cfg;
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    ordered_json j;
    j["task"] = cfg.train.task;
    j["seed"] = cfg.train.seed;
    ordered_json t;
    t["delta_alpha"] = cfg.train.delta_alpha;
    t["init_act_bits"] = cfg.train.init_act_bits;
    t["init_weight_bits"] = cfg.train.init_weight_bits;
    t["total_epochs"] = cfg.train.total_epochs;
    t["requant_epochs"] = cfg.train.requant_epochs;
    t["accuracy_budget"] = cfg.train.accuracy_budget;
    t["alpha_ceiling"] = cfg.train.alpha_ceiling;
    t["lr"] = cfg.train.lr;
    t["momentum"] = cfg.train.momentum;
    t["weight_decay"] = cfg.train.weight_decay;
    t["batch_size"] = cfg.train.batch_size;
    t["train_samples"] = cfg.train.train_samples;
    t["eval_samples"] = cfg.train.eval_samples;
    j["train"] = std::move(t);
    ordered_json h;
    h["frequency"] = cfg.hardware.frequency;
    h["adc_bits"] = cfg.hardware.adc_bits;
    h["dac_bits"] = cfg.hardware.dac_bits;
    h["e_adc_convert"] = cfg.hardware.e_adc_convert;
    h["e_dac_per_row"] = cfg.hardware.e_dac_per_row;
    h["e_array_mac_per_ou"] = cfg.hardware.e_array_mac_per_ou;
    h["e_buffer_read_per_bit"] = cfg.hardware.e_buffer_read_per_bit;
    h["e_buffer_write_per_bit"] = cfg.hardware.e_buffer_write_per_bit;
    h["e_shift_add"] = cfg.hardware.e_shift_add;
    h["e_controller_per_cycle"] = cfg.hardware.e_controller_per_cycle;
    h["adc_energy_scale_per_bit"] = cfg.hardware.adc_energy_scale_per_bit;
    h["output_bits"] = cfg.hardware.output_bits;
    h["ir_bytes"] = cfg.hardware.ir_bytes;
    h["or_bytes"] = cfg.hardware.or_bytes;
    j["hardware"] = std::move(h);
    ordered_json c;
    c["xbar_rows"] = cfg.crossbar.xbar_rows;
    c["xbar_cols"] = cfg.crossbar.xbar_cols;
    c["ou_height"] = cfg.crossbar.ou_height;
    c["ou_width"] = cfg.crossbar.ou_width;
    c["bits_per_cell"] = cfg.crossbar.bits_per_cell;
    j["crossbar"] = std::move(c);
    write_text(path, j.dump(2) + "\n");
}

void save_model(const std::string& path, const nn::Model& m,
                const std::string& task, std::uint64_t seed) {
    ordered_json j;
    j["version"] = 1;
    j["task"] = task;
    j["seed"] = seed;
    j["input_beta"] = m.input_beta;
    ordered_json layers = ordered_json::array();
    for (const auto& l : m.layers) {
        const auto& w = l.weights;
        const auto& g = w.wb_grid;
        ordered_json lj;
        lj["name"] = l.name;
        lj["kind"] = l.kind == nn::LayerKind::Conv ? "conv" : "fc";
        lj["dims"] = {{"c_out", l.c_out}, {"c_in", l.c_in}, {"k", l.k}};
        if (l.kind == nn::LayerKind::Conv) {
            lj["in_h"] = l.in_h;
            lj["in_w"] = l.in_w;
        }
        lj["scale"] = w.scale;
        lj["n"] = w.n;
        lj["act_bits"] = l.act.act_bits;
        lj["act_beta"] = l.act.beta;
        lj["ou"] = {{"h", g.ou_height}, {"w", g.ou_width}};
        ordered_json bwt = ordered_json::array();
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            ordered_json row = ordered_json::array();
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                row.push_back(g.bitwidth(vb, hb));
            }
            bwt.push_back(std::move(row));
        }
        lj["bitwidth_table"] = std::move(bwt);
        lj["signs"] = matrix_to_json(w.sign, true);
        ordered_json planes = ordered_json::array();
        for (int b = 0; b < w.n; ++b) {
            planes.push_back(matrix_to_json(w.bit_planes[static_cast<std::size_t>(b)], true));
        }
        lj["bit_planes"] = std::move(planes);
        ordered_json bias = ordered_json::array();
        for (double v : l.bias.data) bias.push_back(v);
        lj["bias"] = std::move(bias);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    write_text(path, j.dump(2) + "\n");
}

LoadedModel load_model(const std::string& path) {
    const ordered_json j = read_json(path);
    check_keys(j, {"version", "task", "seed", "input_beta", "layers"}, "model");
    LoadedModel out;
    out.task = j.value("task", std::string("blobs"));
    out.seed = j.value("seed", 0ull);
    out.model.input_beta = j.at("input_beta").get<double>();

    for (const auto& lj : j.at("layers")) {
        check_keys(lj,
                   {"name", "kind", "dims", "in_h", "in_w", "scale", "n", "act_bits",
                    "act_beta", "ou", "bitwidth_table", "signs", "bit_planes", "bias"},
                   "model.layers[]");
        nn::Layer l;
        l.name = lj.at("name").get<std::string>();
        const std::string kind = lj.at("kind").get<std::string>();
        if (kind == "conv") {
            l.kind = nn::LayerKind::Conv;
        } else if (kind == "fc") {
            l.kind = nn::LayerKind::Dense;
        } else {
            throw std::runtime_error("model: unknown layer kind '" + kind + "'");
        }
        l.c_out = lj.at("dims").at("c_out").get<std::size_t>();
        l.c_in = lj.at("dims").at("c_in").get<std::size_t>();
        l.k = lj.at("dims").at("k").get<std::size_t>();
        if (l.kind == nn::LayerKind::Conv) {
            l.in_h = lj.at("in_h").get<std::size_t>();
            l.in_w = lj.at("in_w").get<std::size_t>();
        }
        l.act.act_bits = lj.at("act_bits").get<int>();
        l.act.beta = lj.at("act_beta").get<double>();

        quant::BitLayer w;
        w.rows = l.weight_rows();
        w.cols = l.c_out;
        w.scale = lj.at("scale").get<double>();
        w.n = lj.at("n").get<int>();
        if (w.n < 1 || w.n > 16) throw std::runtime_error("model: n out of range");
        w.wb_grid = quant::partition(w.rows, w.cols, lj.at("ou").at("h").get<std::size_t>(),
                                     lj.at("ou").at("w").get<std::size_t>(), w.n);
        const auto& g = w.wb_grid;

        const auto& bwt = lj.at("bitwidth_table");
        if (bwt.size() != g.num_vblock) {
            throw std::runtime_error("model: bitwidth_table row count mismatch");
        }
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            if (bwt[vb].size() != g.num_hblock) {
                throw std::runtime_error("model: bitwidth_table column count mismatch");
            }
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                const int bw = bwt[vb][hb].get<int>();
                if (bw < 0 || bw > w.n) {
                    throw std::runtime_error("model: bitwidth out of range");
                }
                for (int b = 0; b < w.n; ++b) {
                    w.wb_grid.set_mask(vb, hb, b, b < bw ? 1 : 0);
                }
            }
        }
        w.wb_grid.recompute_bitwidths();

        w.sign = matrix_from_json(lj.at("signs"), w.rows, w.cols, "model signs");
        for (double v : w.sign.data) {
            if (v != 1.0 && v != -1.0) throw std::runtime_error("model: signs must be +/-1");
        }
        const auto& planes = lj.at("bit_planes");
        if (planes.size() != static_cast<std::size_t>(w.n)) {
            throw std::runtime_error("model: expected n bit planes");
        }
        for (int b = 0; b < w.n; ++b) {
            Tensor p = matrix_from_json(planes[static_cast<std::size_t>(b)], w.rows, w.cols,
                                        "model bit plane");
            for (double v : p.data) {
                if (v != 0.0 && v != 1.0) {
                    throw std::runtime_error("model: bit planes must be strictly binary");
                }
            }
            w.bit_planes.push_back(std::move(p));
        }
        // masked bits (at or above the block bitwidth) must be zero
        for (std::size_t vb = 0; vb < g.num_vblock; ++vb) {
            for (std::size_t hb = 0; hb < g.num_hblock; ++hb) {
                for (int b = 0; b < w.n; ++b) {
                    if (w.wb_grid.mask(vb, hb, b)) continue;
                    for (std::size_t i = g.row_begin(vb); i < g.row_end(vb); ++i) {
                        for (std::size_t jj = g.col_begin(hb); jj < g.col_end(hb); ++jj) {
                            if (w.bit_planes[static_cast<std::size_t>(b)].at(i, jj) != 0.0) {
                                throw std::runtime_error(
                                    "model: non-zero plane data above the block bitwidth");
                            }
                        }
                    }
                }
            }
        }

        const auto& bias = lj.at("bias");
        if (bias.size() != l.c_out) throw std::runtime_error("model: bias width mismatch");
        l.bias = Tensor({l.c_out});
        for (std::size_t i = 0; i < l.c_out; ++i) l.bias[i] = bias[i].get<double>();

        l.weights = std::move(w);
        out.model.layers.push_back(std::move(l));
    }
    if (out.model.layers.empty()) throw std::runtime_error("model: no layers");
    return out;
}

void save_layout(const std::string& path, const mapper::CrossbarLayout& layout) {
    ordered_json j;
    j["scheme"] = mapper::scheme_name(layout.scheme);
    j["spec"] = {{"xbar_rows", layout.spec.xbar_rows},
                 {"xbar_cols", layout.spec.xbar_cols},
                 {"ou_height", layout.spec.ou_height},
                 {"ou_width", layout.spec.ou_width}};
    j["straddles"] = layout.straddle_count;
    ordered_json xbars = ordered_json::array();
    for (std::size_t id = 0; id < layout.crossbars.size(); ++id) {
        const auto& xb = layout.crossbars[id];
        ordered_json xj;
        xj["id"] = id;
        xj["layer"] = xb.layer;
        xj["ou_rows"] = xb.ou_rows;
        xj["ou_cols"] = xb.ou_cols;
        ordered_json grid = ordered_json::array();
        for (std::size_t r = 0; r < xb.ou_rows; ++r) {
            ordered_json row = ordered_json::array();
            for (std::size_t c = 0; c < xb.ou_cols; ++c) {
                const auto& s = xb.slot(r, c);
                if (s.spare()) {
                    row.push_back(ordered_json{{"spare", true}});
                } else if (layout.scheme == mapper::Scheme::PrecisionAware) {
                    row.push_back(ordered_json{{"wb", {s.cells[0].vblock, s.cells[0].hblock}},
                                               {"bit", s.cells[0].bit}});
                } else {
                    ordered_json cells = ordered_json::array();
                    for (const auto& cell : s.cells) {
                        cells.push_back(ordered_json{{"wb", {cell.vblock, cell.hblock}},
                                                     {"bit", cell.bit},
                                                     {"vec", cell.vec}});
                    }
                    row.push_back(ordered_json{{"cells", std::move(cells)}});
                }
            }
            grid.push_back(std::move(row));
        }
        xj["ous"] = std::move(grid);
        xbars.push_back(std::move(xj));
    }
    j["crossbars"] = std::move(xbars);
    write_text(path, j.dump(2) + "\n");
}

void save_trace(const std::string& path, const sim::CycleTrace& trace) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& e : trace.events) {
        ordered_json j;
        j["cycle"] = e.cycle;
        j["crossbar"] = e.crossbar;
        j["activated_rows"] = {e.row_begin, e.row_end};
        j["activated_cols"] = {e.col_begin, e.col_end};
        j["wb_id"] = {e.vblock, e.hblock};
        j["weight_bit"] = e.weight_bit;
        j["act_bit"] = e.act_bit;
        j["skip"] = e.skip;
        j["fetch_next"] = e.fetch_next;
        j["adc_outputs"] = e.adc_outputs;
        j["psum_after"] = e.psum_after;
        f << j.dump() << "\n";
    }
}

void save_report_csv(const std::string& path, const sim::SimReport& rep) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "layer,cycles,latency_s,e_adc,e_dac,e_array,e_buffer,e_sa,e_ctrl,lut_bytes\n";
    char buf[512];
    auto emit = [&](const sim::LayerReport& lr) {
        std::snprintf(buf, sizeof(buf), "%s,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                      lr.name.c_str(), static_cast<unsigned long long>(lr.cycles),
                      lr.latency_s, lr.energy.adc, lr.energy.dac, lr.energy.array,
                      lr.energy.buffer, lr.energy.shift_add, lr.energy.controller,
                      lr.lut_bytes);
        f << buf;
    };
    for (const auto& lr : rep.layers) emit(lr);
    emit(rep.total);
}

void save_ou_sweep_csv(const std::string& path, const std::vector<sim::OuSweepRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "ou_height,ou_width,adc_bits,model_bits,cycles,e_adc,e_dac,e_array,e_buffer,e_sa,e_ctrl\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%d,%zu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      r.ou_height, r.ou_width, r.adc_bits, r.model_bits,
                      static_cast<unsigned long long>(r.cycles), r.energy.adc,
                      r.energy.dac, r.energy.array, r.energy.buffer,
                      r.energy.shift_add, r.energy.controller);
        f << buf;
    }
}

} // namespace bwq::io
