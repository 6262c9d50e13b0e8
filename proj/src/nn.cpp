#include "bwq/nn.hpp"
#include "bwq/common.hpp"
#include "bwq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bwq::nn {

// Lower a flat [batch, c_in*in_h*in_w] activation map to the patch matrix
// [batch*patches, c_in*k*k]. Row layout of a patch is ci*k*k + a*k + b, the
// same ordering as the flattened conv weight, so the training-side matmul
// and the mapping-side layout agree by construction.
Tensor im2col_layer(const Layer& l, const Tensor& in_flat) {
    if (l.kind == LayerKind::Dense) return in_flat;
    const std::size_t batch = in_flat.rows();
    const std::size_t P = l.patches();
    const std::size_t rows = l.c_in * l.k * l.k;
    Tensor out = Tensor::matrix(batch * P, rows);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t oh = 0; oh < l.out_h(); ++oh) {
            for (std::size_t ow = 0; ow < l.out_w(); ++ow) {
                const std::size_t p = oh * l.out_w() + ow;
                for (std::size_t ci = 0; ci < l.c_in; ++ci) {
                    for (std::size_t a = 0; a < l.k; ++a) {
                        for (std::size_t b = 0; b < l.k; ++b) {
                            const std::size_t src =
                                ci * l.in_h * l.in_w + (oh + a) * l.in_w + (ow + b);
                            out.at(s * P + p, ci * l.k * l.k + a * l.k + b) =
                                in_flat.at(s, src);
                        }
                    }
                }
            }
        }
    }
    return out;
}

namespace {

// Scatter-accumulate the patch-space gradient back onto the activation map.
Tensor col2im(const Layer& l, const Tensor& d_patches, std::size_t batch) {
    const std::size_t P = l.patches();
    Tensor out = Tensor::matrix(batch, l.c_in * l.in_h * l.in_w);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t oh = 0; oh < l.out_h(); ++oh) {
            for (std::size_t ow = 0; ow < l.out_w(); ++ow) {
                const std::size_t p = oh * l.out_w() + ow;
                for (std::size_t ci = 0; ci < l.c_in; ++ci) {
                    for (std::size_t a = 0; a < l.k; ++a) {
                        for (std::size_t b = 0; b < l.k; ++b) {
                            const std::size_t dst =
                                ci * l.in_h * l.in_w + (oh + a) * l.in_w + (ow + b);
                            out.at(s, dst) +=
                                d_patches.at(s * P + p, ci * l.k * l.k + a * l.k + b);
                        }
                    }
                }
            }
        }
    }
    return out;
}

} // namespace

// conv z is [batch*patches, c_out]; the next layer consumes it channel-major
// as [batch, c_out*patches].
Tensor to_flat_layer(const Layer& l, const Tensor& z, std::size_t batch) {
    if (l.kind == LayerKind::Dense) return z;
    const std::size_t P = l.patches();
    Tensor out = Tensor::matrix(batch, l.c_out * P);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t co = 0; co < l.c_out; ++co) {
                out.at(s, co * P + p) = z.at(s * P + p, co);
            }
        }
    }
    return out;
}

namespace {

Tensor from_flat(const Layer& l, const Tensor& z_flat, std::size_t batch) {
    if (l.kind == LayerKind::Dense) return z_flat;
    const std::size_t P = l.patches();
    Tensor out = Tensor::matrix(batch * P, l.c_out);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t co = 0; co < l.c_out; ++co) {
                out.at(s * P + p, co) = z_flat.at(s, co * P + p);
            }
        }
    }
    return out;
}

Tensor matmul_t(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    kernels::matmul(a.data.data(), b.data.data(), c.data.data(),
                    a.rows(), a.cols(), b.cols());
    return c;
}

} // namespace

void Model::set_act_bits(int bits) {
    for (auto& l : layers) l.act.act_bits = bits;
}

std::size_t Model::total_params() const {
    std::size_t t = 0;
    for (const auto& l : layers) t += l.weights.wb_grid.param_count();
    return t;
}

std::vector<const quant::BitLayer*> Model::bit_layers() const {
    std::vector<const quant::BitLayer*> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(&l.weights);
    return out;
}

Gradients Gradients::zeros_like(const Model& m) {
    Gradients g;
    g.layers.resize(m.layers.size());
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& w = m.layers[li].weights;
        g.layers[li].planes.assign(static_cast<std::size_t>(w.n),
                                   Tensor::matrix(w.rows, w.cols));
        g.layers[li].bias = Tensor({m.layers[li].c_out});
    }
    return g;
}

Tensor forward(Model& m, const Tensor& input, const ForwardOptions& opts) {
    if (m.layers.empty()) throw std::logic_error("forward: empty model");
    if (input.shape.size() != 2) throw std::invalid_argument("forward: input must be 2D");

    const Layer& first = m.layers.front();
    const std::size_t expect = first.kind == LayerKind::Conv
                                   ? first.c_in * first.in_h * first.in_w
                                   : first.c_in;
    if (input.cols() != expect) {
        throw std::invalid_argument("forward: input width " + std::to_string(input.cols()) +
                                    " does not match layer expectation " +
                                    std::to_string(expect));
    }

    const std::size_t batch = input.rows();
    m.cache.assign(m.layers.size(), {});
    m.cached_batch = batch;

    // Network input is clipped to [0, input_beta] and fed through the same
    // fixed quantizer the hardware path uses.
    Tensor acts = input;
    for (double& v : acts.data) v = std::clamp(v, 0.0, m.input_beta);
    if (opts.quantize_acts) {
        acts = quant::quantize_activation(acts, m.input_beta, m.input_bits()).dequant();
    }

    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        Layer& l = m.layers[li];
        auto& c = m.cache[li];
        c.input = im2col_layer(l, acts);
        c.weight = quant::reconstruct(l.weights);
        c.z = matmul_t(c.input, c.weight);
        for (std::size_t r = 0; r < c.z.rows(); ++r) {
            for (std::size_t j = 0; j < l.c_out; ++j) {
                c.z.at(r, j) += l.bias[j];
            }
        }
        c.z_flat = to_flat_layer(l, c.z, batch);
        c.z_flat.require_finite("layer " + l.name + " pre-activation");

        if (li + 1 == m.layers.size()) {
            m.forward_done = true;
            return c.z_flat;   // logits
        }
        acts = quant::pact(c.z_flat, l.act.beta);
        if (opts.quantize_acts) {
            acts = quant::quantize_activation(acts, l.act.beta, l.act.act_bits).dequant();
        }
    }
    throw std::logic_error("unreachable");
}

Gradients backward(Model& m, const Tensor& dlogits, double alpha) {
    if (!m.forward_done) {
        throw std::logic_error("backward: no preceding forward pass");
    }
    Gradients g = Gradients::zeros_like(m);
    const std::size_t batch = m.cached_batch;

    std::size_t total_params = m.total_params();

    Tensor d_flat = dlogits;   // gradient w.r.t. current layer's z_flat
    for (std::size_t li = m.layers.size(); li-- > 0;) {
        Layer& l = m.layers[li];
        auto& c = m.cache[li];
        if (!d_flat.same_shape(c.z_flat)) {
            throw std::invalid_argument("backward: loss gradient shape mismatch");
        }
        Tensor dz = from_flat(l, d_flat, batch);

        // weight and bias gradients
        Tensor dw = Tensor::matrix(l.weight_rows(), l.c_out);
        kernels::matmul_at(c.input.data.data(), dz.data.data(), dw.data.data(),
                           c.input.rows(), c.input.cols(), dz.cols());
        for (std::size_t r = 0; r < dz.rows(); ++r) {
            for (std::size_t j = 0; j < l.c_out; ++j) {
                g.layers[li].bias[j] += dz.at(r, j);
            }
        }

        // chain dW into the bit planes: dplane_b = dW * sign * step * 2^b * mask
        const auto& bl = l.weights;
        const auto& grid = bl.wb_grid;
        const double step = bl.level_step();
        for (int b = 0; b < bl.n; ++b) {
            Tensor& gp = g.layers[li].planes[static_cast<std::size_t>(b)];
            const double bit_scale = step * static_cast<double>(1 << b);
            for (std::size_t i = 0; i < bl.rows; ++i) {
                const std::size_t vb = i / grid.ou_height;
                for (std::size_t j = 0; j < bl.cols; ++j) {
                    const std::size_t hb = j / grid.ou_width;
                    if (!grid.mask(vb, hb, b)) continue;
                    gp.at(i, j) = dw.at(i, j) * bl.sign.at(i, j) * bit_scale;
                }
            }
        }
        if (alpha > 0.0) {
            const double coeff = alpha * quant::reg_coefficient(bl, total_params);
            auto gl = quant::group_lasso_grad(bl);
            for (int b = 0; b < bl.n; ++b) {
                Tensor& gp = g.layers[li].planes[static_cast<std::size_t>(b)];
                for (std::size_t i = 0; i < gp.numel(); ++i) {
                    gp.data[i] += coeff * gl[static_cast<std::size_t>(b)].data[i];
                }
            }
        }

        if (li == 0) break;

        // gradient to this layer's input activations
        Tensor dx = Tensor::matrix(dz.rows(), l.weight_rows());
        kernels::matmul_bt(dz.data.data(), c.weight.data.data(), dx.data.data(),
                           dz.rows(), dz.cols(), c.weight.rows());
        Tensor d_acts = (l.kind == LayerKind::Conv) ? col2im(l, dx, batch) : dx;

        // through the previous layer's quantizer (straight-through) and clip
        Layer& prev = m.layers[li - 1];
        const Tensor& z_prev = m.cache[li - 1].z_flat;
        g.layers[li - 1].beta += quant::pact_grad_beta(z_prev, prev.act.beta, d_acts);
        d_flat = quant::pact_grad_input(z_prev, prev.act.beta, d_acts);
    }
    return g;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t batch = logits.rows();
    const std::size_t classes = logits.cols();
    if (labels.size() != batch) {
        throw std::invalid_argument("cross_entropy: batch/label count mismatch");
    }
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::invalid_argument("cross_entropy: label out of range");
        }
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, logits.at(r, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < classes; ++j) lse += std::exp(logits.at(r, j) - mx);
        total += mx + std::log(lse) - logits.at(r, static_cast<std::size_t>(y));
    }
    return total / static_cast<double>(batch);
}

Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t batch = logits.rows();
    const std::size_t classes = logits.cols();
    Tensor g = Tensor::matrix(batch, classes);
    for (std::size_t r = 0; r < batch; ++r) {
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, logits.at(r, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) denom += std::exp(logits.at(r, j) - mx);
        for (std::size_t j = 0; j < classes; ++j) {
            g.at(r, j) = std::exp(logits.at(r, j) - mx) / denom;
        }
        g.at(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    }
    for (double& v : g.data) v /= static_cast<double>(batch);
    return g;
}

OptimState OptimState::init(const Model& m, double lr, double momentum,
                            double weight_decay, int total_epochs) {
    OptimState s;
    s.learning_rate = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.total_epochs = total_epochs;
    s.vel.resize(m.layers.size());
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& w = m.layers[li].weights;
        s.vel[li].planes.assign(static_cast<std::size_t>(w.n),
                                Tensor::matrix(w.rows, w.cols));
        s.vel[li].bias = Tensor({m.layers[li].c_out});
    }
    return s;
}

double OptimState::lr_at(int e) const {
    if (total_epochs <= 0) return learning_rate;
    const double t = std::clamp(static_cast<double>(e) / total_epochs, 0.0, 1.0);
    return learning_rate * 0.5 * (1.0 + std::cos(M_PI * t));
}

void OptimState::sync_masks(const Model& m) {
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& w = m.layers[li].weights;
        const auto& grid = w.wb_grid;
        for (int b = 0; b < w.n; ++b) {
            Tensor& v = vel[li].planes[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < w.rows; ++i) {
                const std::size_t vb = i / grid.ou_height;
                for (std::size_t j = 0; j < w.cols; ++j) {
                    if (!grid.mask(vb, j / grid.ou_width, b)) v.at(i, j) = 0.0;
                }
            }
        }
    }
}

void sgd_update(double* p, double* v, const double* g, std::size_t count,
                double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < count; ++i) {
        v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
        p[i] -= lr * v[i];
    }
}

void sgd_step(Model& m, const Gradients& g, OptimState& state) {
    const double lr = state.lr_at(state.epoch);
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        Layer& l = m.layers[li];
        auto& vel = state.vel[li];
        for (int b = 0; b < l.weights.n; ++b) {
            auto& plane = l.weights.bit_planes[static_cast<std::size_t>(b)];
            sgd_update(plane.data.data(), vel.planes[static_cast<std::size_t>(b)].data.data(),
                       g.layers[li].planes[static_cast<std::size_t>(b)].data.data(),
                       plane.numel(), lr, state.momentum, state.weight_decay);
        }
        l.weights.clamp_planes();
        sgd_update(l.bias.data.data(), vel.bias.data.data(),
                   g.layers[li].bias.data.data(), l.bias.numel(),
                   lr, state.momentum, state.weight_decay);
        vel.beta = state.momentum * vel.beta + g.layers[li].beta;
        l.act.beta = std::max(l.act.beta - lr * vel.beta, quant::kBetaFloor);
    }
}

double accuracy(Model& m, const Tensor& inputs, const std::vector<int>& labels) {
    Tensor logits = forward(m, inputs);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits.at(r, j) > logits.at(r, best)) best = j;
        }
        if (static_cast<int>(best) == labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

Dataset make_blobs(std::uint64_t seed, std::size_t samples) {
    Rng rng(seed ^ 0xb10b5ull);
    Dataset ds;
    ds.num_classes = 3;
    ds.input_beta = 5.0;
    ds.inputs = Tensor::matrix(samples, 2);
    ds.labels.resize(samples);
    const double cx[3] = {1.2, 3.8, 2.4};
    const double cy[3] = {1.2, 1.6, 3.9};
    for (std::size_t s = 0; s < samples; ++s) {
        const int cls = static_cast<int>(s % 3);
        ds.labels[s] = cls;
        ds.inputs.at(s, 0) = std::clamp(cx[cls] + 0.35 * rng.normal(), 0.0, 5.0);
        ds.inputs.at(s, 1) = std::clamp(cy[cls] + 0.35 * rng.normal(), 0.0, 5.0);
    }
    return ds;
}

Dataset make_images(std::uint64_t seed, std::size_t samples) {
    Rng rng(seed ^ 0x1ca9e5ull);
    Dataset ds;
    ds.num_classes = 3;
    ds.input_beta = 1.0;
    ds.inputs = Tensor::matrix(samples, 64);
    ds.labels.resize(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        const int cls = static_cast<int>(s % 3);
        ds.labels[s] = cls;
        for (std::size_t r = 0; r < 8; ++r) {
            for (std::size_t c = 0; c < 8; ++c) {
                bool on = false;
                switch (cls) {
                    case 0: on = (r / 2) % 2 == 0; break;            // horizontal bands
                    case 1: on = (c / 2) % 2 == 0; break;            // vertical bands
                    default: on = ((r / 2) + (c / 2)) % 2 == 0;      // checkerboard
                }
                const double base = on ? 0.85 : 0.15;
                ds.inputs.at(s, r * 8 + c) =
                    std::clamp(base + rng.uniform(-0.1, 0.1), 0.0, 1.0);
            }
        }
    }
    return ds;
}

namespace {

Tensor random_weight_init(Rng& rng, std::size_t fan_in, std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::matrix(rows, cols);
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    return w;
}

} // namespace

Model make_model(const std::string& task, std::uint64_t seed,
                 int weight_bits, int act_bits,
                 std::size_t ou_height, std::size_t ou_width) {
    Rng rng(seed);
    Model m;
    if (task == "blobs") {
        m.input_beta = 5.0;
        Layer l1;
        l1.kind = LayerKind::Dense;
        l1.name = "fc1";
        l1.c_in = 2;
        l1.c_out = 48;
        l1.weights = quant::BitLayer::from_real(random_weight_init(rng, 2, 2, 48),
                                                weight_bits, ou_height, ou_width);
        l1.bias = Tensor({48});
        Layer l2;
        l2.kind = LayerKind::Dense;
        l2.name = "fc2";
        l2.c_in = 48;
        l2.c_out = 3;
        l2.weights = quant::BitLayer::from_real(random_weight_init(rng, 16, 48, 3),
                                                weight_bits, ou_height, ou_width);
        l2.bias = Tensor({3});
        m.layers = {l1, l2};
    } else if (task == "images") {
        m.input_beta = 1.0;
        Layer l1;
        l1.kind = LayerKind::Conv;
        l1.name = "conv1";
        l1.c_in = 1;
        l1.c_out = 4;
        l1.k = 3;
        l1.in_h = l1.in_w = 8;
        Tensor w4({4, 1, 3, 3});
        const double limit = std::sqrt(6.0 / 9.0);
        for (double& v : w4.data) v = rng.uniform(-limit, limit);
        l1.weights = quant::BitLayer::from_real(quant::reshape_conv(w4),
                                                weight_bits, ou_height, ou_width);
        l1.bias = Tensor({4});
        Layer l2;
        l2.kind = LayerKind::Dense;
        l2.name = "fc1";
        l2.c_in = 4 * 36;
        l2.c_out = 3;
        l2.weights = quant::BitLayer::from_real(random_weight_init(rng, 144, 144, 3),
                                                weight_bits, ou_height, ou_width);
        l2.bias = Tensor({3});
        m.layers = {l1, l2};
    } else {
        throw std::invalid_argument("unknown task: " + task);
    }
    for (auto& l : m.layers) {
        l.act.beta = 4.0;
        l.act.act_bits = act_bits;
    }
    return m;
}

} // namespace bwq::nn
