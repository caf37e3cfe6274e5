#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bsc/patch.hpp"
#include "bsc/tensor.hpp"

namespace bsc {

struct ConvLayerSpec {
    int kh = 1, kw = 1;
    int in_c = 1, out_c = 1;
    int stride = 1;
    bool relu = false;

    bool operator==(const ConvLayerSpec&) const = default;
};

// Pixel normalization schemes recorded in the model file so inference
// matches training. kNormByte255: value / 255.
constexpr uint8_t kNormByte255 = 1;

/// Parameters of one fully-convolutional binary classifier: a stack of
/// valid-padding conv layers, weights [kh,kw,in,out], biases [out].
struct NetworkModel {
    std::vector<ConvLayerSpec> layers;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    uint8_t norm_tag = kNormByte255;
    uint64_t rng_seed = 0;

    bool equals(const NetworkModel& o) const;
};

struct TrainConfig {
    float learning_rate = 0.01f;
    int epochs = 50;
    int batch_size = 32;
    uint64_t seed = 0;
    // He-uniform gain (sqrt(6)); unit scale leaves the deep stack in a
    // near-zero-gradient basin that 50 epochs cannot escape.
    float weight_init_scale = 2.449f;
};

/// Seeded network construction: weights uniform in [-s, s] with
/// s = scale / sqrt(kh*kw*in_c), biases zero.
NetworkModel make_network(std::vector<ConvLayerSpec> layers, uint64_t seed,
                          float init_scale = 1.0f);

/// The standard patch classifier: five valid stride-1 conv layers taking
/// 20x20x3 to 1x1x2 (spatial trace 20-16-12-8-4-1), ReLU on layers 1-4,
/// softmax applied outside on the final pair of logits.
std::vector<ConvLayerSpec> default_patch_layers();
NetworkModel make_default_model(uint64_t seed, float init_scale = 1.0f);

/// Construction-time contract for the patch classifier: exactly 5 layers,
/// ReLU on all but the last, final output 1x1x2 over a 20x20x3 input.
/// Throws ShapeError when violated.
void validate_patch_architecture(const NetworkModel& model);

/// Max-subtracted two-way softmax. Throws NumericError on non-finite logits.
std::array<float, 2> softmax2(float logit0, float logit1);

/// -log(probs[label]), clamped at 1e-12 inside the log.
float cross_entropy(const std::array<float, 2>& probs, int label);

/// Byte pixels (0..255) to the network's input scale.
Tensor normalize_patch(const Tensor& byte_patch, uint8_t norm_tag);

/// Forward pass over a normalized input. The layer chain must reduce the
/// input to a 1x1x2 map; returns its softmax. Pure function of
/// (input, model).
std::array<float, 2> network_forward(const Tensor& input, const NetworkModel& model);

/// Probability of the positive class for a raw byte patch.
float positive_probability(const Tensor& byte_patch, const NetworkModel& model);

struct Gradients {
    std::vector<Tensor> d_weights;
    std::vector<Tensor> d_biases;
};

Gradients make_zero_gradients(const NetworkModel& model);

/// Backprop through the conv/ReLU stack and the softmax cross-entropy head.
/// Accumulates into `grads` (callers zero or reuse them) and returns the
/// sample loss.
float network_backward(const Tensor& input, int label, const NetworkModel& model,
                       Gradients& grads);

struct TrainTrace {
    std::vector<float> epoch_mean_loss;
};

/// Minibatch SGD: w <- w - lr * grad averaged over the batch, sample order
/// reshuffled each epoch from cfg.seed. Deterministic given (seed, samples)
/// for any thread count: per-sample gradients are reduced in sample order.
TrainTrace sgd_train(NetworkModel& model, const std::vector<PatchSample>& samples,
                     const TrainConfig& cfg);

// Model file, bit-exact: magic "BSCN", version u16, layer count u8,
// per-layer (kh,kw,in_c,out_c,stride) u16 each + relu u8, norm tag u8,
// seed u64, then per layer its weights then biases as little-endian f32 in
// [dy,dx,in,out] row-major order.
constexpr uint16_t kModelFormatVersion = 1;

std::vector<uint8_t> model_to_bytes(const NetworkModel& model);
NetworkModel model_from_bytes(const uint8_t* data, size_t len);
void model_save(const NetworkModel& model, const std::string& path);
NetworkModel model_load(const std::string& path);

}  // namespace bsc
