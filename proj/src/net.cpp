#include "bsc/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bsc/byteio.hpp"
#include "bsc/conv_kernels.hpp"
#include "bsc/rng.hpp"

namespace bsc {

namespace {

kernels::Conv2dDims dims_for(const ConvLayerSpec& l, int in_h, int in_w) {
    kernels::Conv2dDims d;
    d.in_h = in_h;
    d.in_w = in_w;
    d.in_c = l.in_c;
    d.kh = l.kh;
    d.kw = l.kw;
    d.out_c = l.out_c;
    d.stride = l.stride;
    return d;
}

void check_layer_chain(const NetworkModel& model, const Tensor& input) {
    if (input.rank() != 3) {
        throw ShapeError("network input must be rank-3 [H,W,C], got " +
                         Tensor::shape_string(input.shape()));
    }
    if (model.layers.empty()) throw ShapeError("network has no layers");
    int h = input.dim(0), w = input.dim(1), c = input.dim(2);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const ConvLayerSpec& l = model.layers[li];
        if (l.in_c != c) {
            throw ShapeError("layer " + std::to_string(li) + ": expects " +
                             std::to_string(l.in_c) + " input channels, got " +
                             std::to_string(c));
        }
        if (h < l.kh || w < l.kw) {
            throw ShapeError("layer " + std::to_string(li) + ": input " + std::to_string(h) +
                             "x" + std::to_string(w) + " smaller than kernel " +
                             std::to_string(l.kh) + "x" + std::to_string(l.kw));
        }
        h = (h - l.kh) / l.stride + 1;
        w = (w - l.kw) / l.stride + 1;
        c = l.out_c;
    }
    if (h != 1 || w != 1 || c != 2) {
        throw ShapeError("layer chain must end in a 1x1x2 map, got " + std::to_string(h) +
                         "x" + std::to_string(w) + "x" + std::to_string(c));
    }
}

void validate_layer_spec(const ConvLayerSpec& l, size_t index) {
    if (l.kh < 1 || l.kw < 1 || l.in_c < 1 || l.out_c < 1 || l.stride < 1) {
        throw ShapeError("layer " + std::to_string(index) +
                         ": kernel dims, channels and stride must be >= 1");
    }
}

}  // namespace

bool NetworkModel::equals(const NetworkModel& o) const {
    if (layers != o.layers || norm_tag != o.norm_tag || rng_seed != o.rng_seed) return false;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (!weights[i].equals(o.weights[i]) || !biases[i].equals(o.biases[i])) return false;
    }
    return true;
}

NetworkModel make_network(std::vector<ConvLayerSpec> layers, uint64_t seed, float init_scale) {
    NetworkModel m;
    m.layers = std::move(layers);
    m.rng_seed = seed;
    for (size_t li = 0; li < m.layers.size(); ++li) {
        const ConvLayerSpec& l = m.layers[li];
        validate_layer_spec(l, li);
        Rng rng(derive_seed(seed, "init/layer" + std::to_string(li)));
        const float s =
            init_scale / std::sqrt(static_cast<float>(l.kh) * l.kw * l.in_c);
        Tensor w({l.kh, l.kw, l.in_c, l.out_c}, 0.0f);
        for (int64_t j = 0; j < w.size(); ++j) w[j] = rng.uniform(-s, s);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(std::vector<int>{l.out_c}, 0.0f);
    }
    return m;
}

std::vector<ConvLayerSpec> default_patch_layers() {
    return {
        {5, 5, 3, 16, 1, true},   // 20 -> 16
        {5, 5, 16, 32, 1, true},  // 16 -> 12
        {5, 5, 32, 32, 1, true},  // 12 -> 8
        {5, 5, 32, 64, 1, true},  // 8 -> 4
        {4, 4, 64, 2, 1, false},  // 4 -> 1, softmax outside
    };
}

NetworkModel make_default_model(uint64_t seed, float init_scale) {
    NetworkModel m = make_network(default_patch_layers(), seed, init_scale);
    validate_patch_architecture(m);
    return m;
}

void validate_patch_architecture(const NetworkModel& model) {
    if (model.layers.size() != 5) {
        throw ShapeError("patch classifier must have exactly 5 conv layers, got " +
                         std::to_string(model.layers.size()));
    }
    for (size_t li = 0; li + 1 < model.layers.size(); ++li) {
        if (!model.layers[li].relu) {
            throw ShapeError("patch classifier layer " + std::to_string(li) +
                             " must use ReLU");
        }
    }
    if (model.layers.back().relu) {
        throw ShapeError("patch classifier final layer must be linear (softmax outside)");
    }
    if (model.layers.back().out_c != 2) {
        throw ShapeError("patch classifier final layer must emit 2 channels");
    }
    Tensor probe({kPatchSize, kPatchSize, kPatchChannels}, 0.0f);
    check_layer_chain(model, probe);  // throws unless 20x20x3 -> 1x1x2
}

std::array<float, 2> softmax2(float logit0, float logit1) {
    if (!std::isfinite(logit0) || !std::isfinite(logit1)) {
        throw NumericError("softmax: non-finite logits");
    }
    const float m = std::max(logit0, logit1);
    const float e0 = std::exp(logit0 - m);
    const float e1 = std::exp(logit1 - m);
    const float z = e0 + e1;
    return {e0 / z, e1 / z};
}

float cross_entropy(const std::array<float, 2>& probs, int label) {
    if (label != 0 && label != 1) throw ConfigError("cross_entropy: label must be 0 or 1");
    const float p = std::max(probs[static_cast<size_t>(label)], 1e-12f);
    return -std::log(p);
}

Tensor normalize_patch(const Tensor& byte_patch, uint8_t norm_tag) {
    if (norm_tag != kNormByte255) {
        throw FormatError("unknown normalization tag " + std::to_string(norm_tag));
    }
    return byte_patch.map([](float v) { return v / 255.0f; });
}

std::array<float, 2> network_forward(const Tensor& input, const NetworkModel& model) {
    check_layer_chain(model, input);
    Tensor act = input;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const ConvLayerSpec& l = model.layers[li];
        const kernels::Conv2dDims d = dims_for(l, act.dim(0), act.dim(1));
        Tensor next({d.out_h(), d.out_w(), l.out_c}, 0.0f);
        kernels::conv2d_forward(act.data(), model.weights[li].data(),
                                model.biases[li].data(), next.data(), d, l.relu);
        act = std::move(next);
    }
    return softmax2(act[0], act[1]);
}

float positive_probability(const Tensor& byte_patch, const NetworkModel& model) {
    return network_forward(normalize_patch(byte_patch, model.norm_tag), model)[1];
}

Gradients make_zero_gradients(const NetworkModel& model) {
    Gradients g;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        g.d_weights.push_back(Tensor::zeros(model.weights[li].shape()));
        g.d_biases.push_back(Tensor::zeros(model.biases[li].shape()));
    }
    return g;
}

float network_backward(const Tensor& input, int label, const NetworkModel& model,
                       Gradients& grads) {
    if (label != 0 && label != 1) throw ConfigError("network_backward: label must be 0 or 1");
    check_layer_chain(model, input);
    const size_t n_layers = model.layers.size();

    // Forward, keeping each layer's input and pre-activation output.
    std::vector<Tensor> inputs(n_layers);
    std::vector<Tensor> pre(n_layers);
    Tensor act = input;
    for (size_t li = 0; li < n_layers; ++li) {
        const ConvLayerSpec& l = model.layers[li];
        const kernels::Conv2dDims d = dims_for(l, act.dim(0), act.dim(1));
        inputs[li] = std::move(act);
        Tensor z({d.out_h(), d.out_w(), l.out_c}, 0.0f);
        kernels::conv2d_forward(inputs[li].data(), model.weights[li].data(),
                                model.biases[li].data(), z.data(), d, false);
        pre[li] = z;
        if (l.relu) {
            act = z.map([](float v) { return v > 0.0f ? v : 0.0f; });
        } else {
            act = std::move(z);
        }
    }

    const std::array<float, 2> probs = softmax2(act[0], act[1]);
    const float loss = cross_entropy(probs, label);

    // Softmax + cross-entropy head: d(loss)/d(logit) = p - onehot.
    Tensor d_post({1, 1, 2}, 0.0f);
    d_post[0] = probs[0];
    d_post[1] = probs[1];
    d_post[static_cast<int64_t>(label)] -= 1.0f;

    for (size_t li = n_layers; li-- > 0;) {
        const ConvLayerSpec& l = model.layers[li];
        Tensor d_pre = std::move(d_post);
        if (l.relu) {
            const Tensor& z = pre[li];
            for (int64_t j = 0; j < d_pre.size(); ++j) {
                if (z[j] <= 0.0f) d_pre[j] = 0.0f;
            }
        }
        const kernels::Conv2dDims d = dims_for(l, inputs[li].dim(0), inputs[li].dim(1));
        Tensor d_in;
        float* d_in_ptr = nullptr;
        if (li > 0) {
            d_in = Tensor::zeros(inputs[li].shape());
            d_in_ptr = d_in.data();
        }
        kernels::conv2d_backward(inputs[li].data(), model.weights[li].data(), d_pre.data(),
                                 grads.d_weights[li].data(), grads.d_biases[li].data(),
                                 d_in_ptr, d);
        d_post = std::move(d_in);
    }
    return loss;
}

TrainTrace sgd_train(NetworkModel& model, const std::vector<PatchSample>& samples,
                     const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("sgd_train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("sgd_train: batch_size must be >= 1");
    if (cfg.learning_rate < 0.0f || !std::isfinite(cfg.learning_rate)) {
        throw ConfigError("sgd_train: learning_rate must be finite and >= 0");
    }
    if (samples.empty()) throw DataError("sgd_train: empty sample set");
    const size_t n = samples.size();
    size_t positives = 0;
    for (const PatchSample& s : samples) {
        if (s.label != 0 && s.label != 1) {
            throw DataError("sgd_train: sample label must be 0 or 1, got " +
                            std::to_string(s.label));
        }
        positives += (s.label == 1);
    }
    if (positives == 0 || positives == n) {
        throw DataError("sgd_train: degenerate single-class sample set (" +
                        std::to_string(positives) + "/" + std::to_string(n) + " positive)");
    }

    // Validate every input shape up front; nothing may throw inside the
    // parallel batch loop below.
    std::vector<Tensor> inputs;
    inputs.reserve(n);
    for (const PatchSample& s : samples) {
        if (s.pixels.shape() != samples.front().pixels.shape()) {
            throw ShapeError("sgd_train: samples disagree on patch shape");
        }
        inputs.push_back(normalize_patch(s.pixels, model.norm_tag));
    }
    check_layer_chain(model, inputs.front());

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "sgd/shuffle"));

    const size_t batch = static_cast<size_t>(cfg.batch_size);
    std::vector<Gradients> slot(std::min(batch, n));
    std::vector<float> slot_loss(slot.size(), 0.0f);
    for (auto& g : slot) g = make_zero_gradients(model);
    Gradients acc = make_zero_gradients(model);

    TrainTrace trace;
    trace.epoch_mean_loss.reserve(static_cast<size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < n; start += batch) {
            const size_t count = std::min(batch, n - start);

            // Per-sample gradients go to private slots; the reduction below
            // walks them in sample order, so results do not depend on the
            // thread count.
#pragma omp parallel for schedule(static) if (count > 1)
            for (size_t bi = 0; bi < count; ++bi) {
                for (Tensor& t : slot[bi].d_weights) std::memset(t.data(), 0, t.size() * sizeof(float));
                for (Tensor& t : slot[bi].d_biases) std::memset(t.data(), 0, t.size() * sizeof(float));
                const size_t si = order[start + bi];
                slot_loss[bi] =
                    network_backward(inputs[si], samples[si].label, model, slot[bi]);
            }

            for (Tensor& t : acc.d_weights) std::memset(t.data(), 0, t.size() * sizeof(float));
            for (Tensor& t : acc.d_biases) std::memset(t.data(), 0, t.size() * sizeof(float));
            for (size_t bi = 0; bi < count; ++bi) {
                epoch_loss += slot_loss[bi];
                for (size_t li = 0; li < model.layers.size(); ++li) {
                    float* aw = acc.d_weights[li].data();
                    const float* sw = slot[bi].d_weights[li].data();
                    for (int64_t j = 0; j < acc.d_weights[li].size(); ++j) aw[j] += sw[j];
                    float* ab = acc.d_biases[li].data();
                    const float* sb = slot[bi].d_biases[li].data();
                    for (int64_t j = 0; j < acc.d_biases[li].size(); ++j) ab[j] += sb[j];
                }
            }

            const float scale = cfg.learning_rate / static_cast<float>(count);
            for (size_t li = 0; li < model.layers.size(); ++li) {
                float* w = model.weights[li].data();
                const float* gw = acc.d_weights[li].data();
                for (int64_t j = 0; j < model.weights[li].size(); ++j) w[j] -= scale * gw[j];
                float* b = model.biases[li].data();
                const float* gb = acc.d_biases[li].data();
                for (int64_t j = 0; j < model.biases[li].size(); ++j) b[j] -= scale * gb[j];
            }
        }
        trace.epoch_mean_loss.push_back(static_cast<float>(epoch_loss / static_cast<double>(n)));
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kModelMagic[4] = {'B', 'S', 'C', 'N'};

void put_u16_checked(std::vector<uint8_t>& out, int v, const char* field) {
    if (v < 0 || v > 0xffff) {
        throw FormatError(std::string("model file: ") + field + " value " + std::to_string(v) +
                          " does not fit in u16");
    }
    byteio::put_u16(out, static_cast<uint16_t>(v));
}

}  // namespace

std::vector<uint8_t> model_to_bytes(const NetworkModel& model) {
    using namespace byteio;
    if (model.layers.size() > 0xff) throw FormatError("model file: too many layers");
    std::vector<uint8_t> out;
    out.insert(out.end(), kModelMagic, kModelMagic + 4);
    put_u16(out, kModelFormatVersion);
    out.push_back(static_cast<uint8_t>(model.layers.size()));
    for (const ConvLayerSpec& l : model.layers) {
        put_u16_checked(out, l.kh, "kernel height");
        put_u16_checked(out, l.kw, "kernel width");
        put_u16_checked(out, l.in_c, "input channels");
        put_u16_checked(out, l.out_c, "output channels");
        put_u16_checked(out, l.stride, "stride");
        out.push_back(l.relu ? 1 : 0);
    }
    out.push_back(model.norm_tag);
    put_u64(out, model.rng_seed);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const Tensor& w = model.weights[li];
        for (int64_t j = 0; j < w.size(); ++j) put_f32(out, w[j]);
        const Tensor& b = model.biases[li];
        for (int64_t j = 0; j < b.size(); ++j) put_f32(out, b[j]);
    }
    return out;
}

NetworkModel model_from_bytes(const uint8_t* data, size_t len) {
    byteio::Reader r{data, len, "model file"};
    r.expect_magic(kModelMagic);
    const uint16_t version = r.u16("format version");
    if (version != kModelFormatVersion) {
        throw FormatError("model file: unsupported format version " + std::to_string(version) +
                          " at offset 4");
    }
    const uint8_t n_layers = r.u8("layer count");
    if (n_layers == 0) throw FormatError("model file: zero layers at offset 6");

    NetworkModel m;
    for (int li = 0; li < n_layers; ++li) {
        ConvLayerSpec l;
        l.kh = r.u16("kernel height");
        l.kw = r.u16("kernel width");
        l.in_c = r.u16("input channels");
        l.out_c = r.u16("output channels");
        l.stride = r.u16("stride");
        l.relu = r.u8("relu flag") != 0;
        if (l.kh < 1 || l.kw < 1 || l.in_c < 1 || l.out_c < 1 || l.stride < 1) {
            throw FormatError("model file: invalid layer " + std::to_string(li) +
                              " spec before offset " + std::to_string(r.pos));
        }
        m.layers.push_back(l);
    }
    m.norm_tag = r.u8("normalization tag");
    m.rng_seed = r.u64("seed");

    // Before reading weights, check the remaining payload length so a
    // truncation error can report expected vs actual.
    size_t expected_floats = 0;
    for (const ConvLayerSpec& l : m.layers) {
        expected_floats += static_cast<size_t>(l.kh) * l.kw * l.in_c * l.out_c +
                           static_cast<size_t>(l.out_c);
    }
    const size_t remaining = len - r.pos;
    if (remaining != expected_floats * 4) {
        throw FormatError("model file: parameter payload at offset " + std::to_string(r.pos) +
                          " has " + std::to_string(remaining) + " bytes, expected " +
                          std::to_string(expected_floats * 4));
    }
    for (const ConvLayerSpec& l : m.layers) {
        Tensor w({l.kh, l.kw, l.in_c, l.out_c}, 0.0f);
        for (int64_t j = 0; j < w.size(); ++j) w[j] = r.f32("weights");
        m.weights.push_back(std::move(w));
        Tensor b({l.out_c}, 0.0f);
        for (int64_t j = 0; j < b.size(); ++j) b[j] = r.f32("biases");
        m.biases.push_back(std::move(b));
    }
    return m;
}

void model_save(const NetworkModel& model, const std::string& path) {
    byteio::write_file(path, model_to_bytes(model));
}

NetworkModel model_load(const std::string& path) {
    const std::vector<uint8_t> bytes = byteio::read_file(path);
    return model_from_bytes(bytes.data(), bytes.size());
}

}  // namespace bsc
