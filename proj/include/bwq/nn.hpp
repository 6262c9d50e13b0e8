#pragma once

// Minimal deterministic training substrate. Models are sequences of dense
// computations (fully-connected, or conv lowered to a patch matmul) whose
// weights are held in bit-plane form; a trainable clipped-activation
// quantizer sits between layers. Forward caches what backward needs;
// gradients are hand-chained per layer.

#include "bwq/quant.hpp"
#include "bwq/tensor.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bwq::nn {

enum class LayerKind { Dense, Conv };

struct Layer {
    LayerKind kind = LayerKind::Dense;
    std::string name;
    std::size_t c_in = 0, c_out = 0, k = 1;   // conv kernel; k = 1 for dense
    std::size_t in_h = 0, in_w = 0;           // conv input spatial extent
    quant::BitLayer weights;                   // rows = c_in (dense) or c_in*k*k (conv)
    Tensor bias;                               // [c_out], kept in full precision
    quant::PactParam act;                      // clip/quantizer after this layer

    std::size_t out_h() const { return in_h - k + 1; }   // valid conv, stride 1
    std::size_t out_w() const { return in_w - k + 1; }
    std::size_t patches() const { return out_h() * out_w(); }
    std::size_t weight_rows() const {
        return kind == LayerKind::Conv ? c_in * k * k : c_in;
    }
    // width of the activation vector this layer emits to the next one
    std::size_t flat_out() const {
        return kind == LayerKind::Conv ? c_out * patches() : c_out;
    }
};

struct ForwardOptions {
    // When false, activations pass through the clip only (no rounding). The
    // quantizer trains with a straight-through gradient, so this unquantized
    // path is exactly what the analytic backward differentiates; numerical
    // gradient checks run against it.
    bool quantize_acts = true;
};

struct Model {
    std::vector<Layer> layers;
    double input_beta = 1.0;     // fixed clip for quantizing the network input
    int input_bits() const { return layers.empty() ? 8 : layers.front().act.act_bits; }

    void set_act_bits(int bits);
    std::size_t total_params() const;
    std::vector<const quant::BitLayer*> bit_layers() const;

    // forward cache, valid until the next forward() call
    struct LayerCache {
        Tensor input;        // matmul input: [batch(*patches), weight_rows]
        Tensor weight;       // reconstructed weights
        Tensor z;            // pre-activation [batch(*patches), c_out]
        Tensor z_flat;       // z reshaped to [batch, flat_out]
    };
    std::vector<LayerCache> cache;
    std::size_t cached_batch = 0;
    bool forward_done = false;
};

struct Gradients {
    struct LayerGrads {
        std::vector<Tensor> planes;
        Tensor bias;
        double beta = 0.0;
    };
    std::vector<LayerGrads> layers;
    static Gradients zeros_like(const Model& m);
};

// input: [batch, d] for dense-first models, [batch, c_in*in_h*in_w] for
// conv-first. Returns logits [batch, classes] and fills the model cache.
Tensor forward(Model& m, const Tensor& input, const ForwardOptions& opts = {});

// dlogits: gradient of the scalar loss w.r.t. the logits. When alpha > 0 the
// block group-Lasso term (with its per-layer coefficient) is included in the
// plane gradients, so the result differentiates the full training objective.
Gradients backward(Model& m, const Tensor& dlogits, double alpha = 0.0);

// mean softmax cross-entropy
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels);

struct OptimState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epoch = 0;
    int total_epochs = 1;

    struct LayerVel {
        std::vector<Tensor> planes;
        Tensor bias;
        double beta = 0.0;
    };
    std::vector<LayerVel> vel;

    static OptimState init(const Model& m, double lr, double momentum,
                           double weight_decay, int total_epochs);
    // cosine annealing from learning_rate at epoch 0 to 0 at total_epochs
    double lr_at(int e) const;
    // Zeroes plane velocities in masked regions, e.g. after a precision
    // adjustment; pruned bits must not be pushed back by stale momentum.
    void sync_masks(const Model& m);
};

// v <- momentum*v + g + wd*p ; p <- p - lr*v, elementwise over a buffer
void sgd_update(double* p, double* v, const double* g, std::size_t count,
                double lr, double momentum, double weight_decay);

// One optimizer step over every trainable parameter (planes, biases, betas).
// Planes are clipped to [0,1] and masked regions forced to zero afterwards;
// betas are floored at kBetaFloor. Biases take weight decay, betas do not.
void sgd_step(Model& m, const Gradients& g, OptimState& state);

double accuracy(Model& m, const Tensor& inputs, const std::vector<int>& labels);

// Patch lowering shared with the crossbar simulator. im2col_layer turns a
// flat [batch, c_in*in_h*in_w] map into [batch*patches, c_in*k*k] rows
// ordered ci*k*k + a*k + b; to_flat_layer reshapes a conv layer's
// [batch*patches, c_out] output into the channel-major [batch, c_out*patches]
// form the next layer consumes. Both are identity for dense layers.
Tensor im2col_layer(const Layer& l, const Tensor& in_flat);
Tensor to_flat_layer(const Layer& l, const Tensor& z, std::size_t batch);

// ---- synthetic desk-scale tasks ----

struct Dataset {
    Tensor inputs;                // [samples, features]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    double input_beta = 1.0;      // data lives in [0, input_beta]
};

// Three Gaussian blobs in a positive 2D box.
Dataset make_blobs(std::uint64_t seed, std::size_t samples);
// 8x8 single-channel images: three structured patterns plus noise, in [0,1].
Dataset make_images(std::uint64_t seed, std::size_t samples);

// "blobs": 2 -> 16 -> 3 MLP. "images": conv(1->4, k=3) -> dense(144 -> 3).
Model make_model(const std::string& task, std::uint64_t seed,
                 int weight_bits, int act_bits,
                 std::size_t ou_height, std::size_t ou_width);

} // namespace bwq::nn
