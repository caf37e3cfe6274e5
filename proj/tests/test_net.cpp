#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bsc/errors.hpp"
#include "bsc/net.hpp"
#include "bsc/rng.hpp"
#include "oracle_ref.hpp"

using namespace bsc;
namespace fs = std::filesystem;

namespace {

Tensor random_patch(Rng& rng, int h = kPatchSize, int w = kPatchSize) {
    Tensor t({h, w, kPatchChannels}, 0.0f);
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform_int(0, 255));
    return t;
}

// Small two-layer stack over an 8x8x3 input: 3x3x3->4 (ReLU), 6x6x4->2.
NetworkModel tiny_model(uint64_t seed) {
    return make_network({{3, 3, 3, 4, 1, true}, {6, 6, 4, 2, 1, false}}, seed);
}

PatchSample sample_from(Tensor pixels, int label) {
    PatchSample s;
    s.pixels = std::move(pixels);
    s.label = label;
    return s;
}

}  // namespace

TEST_CASE("default architecture maps 20x20x3 to 1x1x2 with ReLU on 1-4") {
    NetworkModel m = make_default_model(1);
    REQUIRE(m.layers.size() == 5);
    validate_patch_architecture(m);
    int h = kPatchSize;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const ConvLayerSpec& L = m.layers[i];
        CHECK(L.relu == (i + 1 < m.layers.size()));
        h = (h - L.kh) / L.stride + 1;
    }
    CHECK(h == 1);
    CHECK(m.layers.back().out_c == 2);

    // Forward emits a two-way distribution.
    Rng rng(3);
    Tensor patch = random_patch(rng);
    std::array<float, 2> p = network_forward(normalize_patch(patch, m.norm_tag), m);
    CHECK(p[0] + p[1] == doctest::Approx(1.0f));
    CHECK(positive_probability(patch, m) == p[1]);
}

TEST_CASE("architecture validation rejects wrong nets") {
    NetworkModel four = make_network(
        {{5, 5, 3, 16, 1, true}, {5, 5, 16, 32, 1, true}, {5, 5, 32, 32, 1, true},
         {8, 8, 32, 2, 1, false}},
        1);
    CHECK_THROWS_AS(validate_patch_architecture(four), ShapeError);

    // ReLU on the last layer violates the contract.
    std::vector<ConvLayerSpec> specs = default_patch_layers();
    specs.back().relu = true;
    CHECK_THROWS_AS(validate_patch_architecture(make_network(specs, 1)), ShapeError);
}

TEST_CASE("softmax and cross entropy behave") {
    auto p = softmax2(0.0f, 0.0f);
    CHECK(p[0] == doctest::Approx(0.5f));
    // Invariant to a shared shift, stable at large magnitudes.
    auto q1 = softmax2(1000.0f, 1001.0f);
    auto q2 = softmax2(0.0f, 1.0f);
    CHECK(q1[1] == doctest::Approx(q2[1]));
    CHECK(softmax2(-30.0f, 30.0f)[1] == 1.0f);  // saturated but finite
    CHECK_THROWS_AS(softmax2(std::nanf(""), 0.0f), NumericError);

    CHECK(cross_entropy({0.5f, 0.5f}, 0) == doctest::Approx(std::log(2.0)));
    CHECK(cross_entropy({1.0f, 0.0f}, 1) < 28.0f);  // clamp keeps it finite
}

TEST_CASE("normalize_patch scales bytes to unit range") {
    Tensor t = Tensor::from_data({1, 2, 3}, {0, 51, 102, 153, 204, 255});
    Tensor n = normalize_patch(t, kNormByte255);
    CHECK(n[0] == 0.0f);
    CHECK(n[5] == 1.0f);
    CHECK(n[1] == doctest::Approx(0.2f));
    CHECK_THROWS_AS(normalize_patch(t, 99), FormatError);
}

TEST_CASE("init is seeded, fan-in scaled, biases zero") {
    NetworkModel a = make_default_model(7), b = make_default_model(7),
                 c = make_default_model(8);
    CHECK(a.equals(b));
    CHECK(!a.equals(c));
    for (const Tensor& bias : a.biases)
        for (int64_t i = 0; i < bias.size(); ++i) CHECK(bias[i] == 0.0f);
    const ConvLayerSpec& L0 = a.layers[0];
    const float bound = 1.0f / std::sqrt(static_cast<float>(L0.kh * L0.kw * L0.in_c));
    for (int64_t i = 0; i < a.weights[0].size(); ++i) {
        CHECK(a.weights[0][i] <= bound);
        CHECK(a.weights[0][i] >= -bound);
    }
}

TEST_CASE("analytic gradients match double-precision finite differences") {
    // Central difference h=1e-3, tolerance rel 1e-2 / abs 1e-4, every
    // parameter of a reduced two-layer net, many random draws. Probes whose
    // +/-h window flips a ReLU sign are skipped: there the difference
    // quotient blends two one-sided slopes and is not the derivative. The
    // skip rate is asserted small so the check keeps its teeth.
    const double h = 1e-3, rel = 1e-2, abs_tol = 1e-4;
    Rng rng(2024);
    int draws = 25;  // acceptance runs >= 100; keep the unit test snappy
    int64_t checked = 0, skipped = 0;
    for (int d = 0; d < draws; ++d) {
        NetworkModel m = tiny_model(1000 + d);
        Tensor patch = random_patch(rng, 8, 8);
        int label = static_cast<int>(rng.bounded(2));

        Gradients g = make_zero_gradients(m);
        network_backward(normalize_patch(patch, m.norm_tag), label, m, g);

        auto probe = [&](float* param, double an) {
            if (oracle::fd_straddles_kink(patch, m, param, h)) {
                ++skipped;
                return;
            }
            ++checked;
            double fd = oracle::fd_gradient(patch, label, m, param, h);
            double tol = abs_tol + rel * std::max(std::fabs(fd), std::fabs(an));
            CHECK(std::fabs(fd - an) <= tol);
        };
        for (size_t li = 0; li < m.layers.size(); ++li) {
            for (int64_t k = 0; k < m.weights[li].size(); ++k)
                probe(&m.weights[li][k], g.d_weights[li][k]);
            for (int64_t k = 0; k < m.biases[li].size(); ++k)
                probe(&m.biases[li][k], g.d_biases[li][k]);
        }
    }
    CHECK(checked > 9000);
    CHECK(skipped * 20 < checked);  // kink probes stay rare (< 5%)
}

TEST_CASE("backward loss equals the reference loss") {
    Rng rng(5);
    NetworkModel m = tiny_model(55);
    Tensor patch = random_patch(rng, 8, 8);
    Gradients g = make_zero_gradients(m);
    float loss = network_backward(normalize_patch(patch, m.norm_tag), 1, m, g);
    CHECK(loss == doctest::Approx(oracle::ref_loss(patch, 1, m)).epsilon(1e-4));
}

TEST_CASE("sgd: lr 0 is a bit-exact no-op") {
    Rng rng(6);
    std::vector<PatchSample> samples;
    for (int i = 0; i < 8; ++i)
        samples.push_back(sample_from(random_patch(rng), i % 2));
    NetworkModel m = make_default_model(3);
    NetworkModel before = m;
    TrainConfig cfg;
    cfg.learning_rate = 0.0f;
    cfg.epochs = 2;
    sgd_train(m, samples, cfg);
    CHECK(m.equals(before));
}

TEST_CASE("sgd is deterministic and separable data is fit") {
    // Bright-vs-dark patches, trivially separable.
    Rng rng(7);
    std::vector<PatchSample> samples;
    for (int i = 0; i < 50; ++i) {
        int label = i % 2;
        Tensor t({kPatchSize, kPatchSize, 3}, 0.0f);
        for (int64_t k = 0; k < t.size(); ++k)
            t[k] = static_cast<float>(label ? rng.uniform_int(160, 255)
                                            : rng.uniform_int(0, 95));
        samples.push_back(sample_from(std::move(t), label));
    }
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 11;
    NetworkModel m1 = make_default_model(9, 2.449f);
    TrainTrace tr1 = sgd_train(m1, samples, cfg);
    NetworkModel m2 = make_default_model(9, 2.449f);
    sgd_train(m2, samples, cfg);
    CHECK(m1.equals(m2));
    REQUIRE(tr1.epoch_mean_loss.size() == 30);
    CHECK(tr1.epoch_mean_loss.back() < 0.1f);

    SUBCASE("config guards") {
        TrainConfig bad;
        bad.epochs = 0;
        CHECK_THROWS_AS(sgd_train(m1, samples, bad), ConfigError);
        bad = {};
        bad.batch_size = 0;
        CHECK_THROWS_AS(sgd_train(m1, samples, bad), ConfigError);
        CHECK_THROWS_AS(sgd_train(m1, {}, {}), DataError);
    }
}

TEST_CASE("model serialization round-trips bit exactly") {
    NetworkModel m = make_default_model(1234, 2.449f);
    std::vector<uint8_t> bytes = model_to_bytes(m);
    NetworkModel back = model_from_bytes(bytes.data(), bytes.size());
    CHECK(back.equals(m));
    CHECK(back.rng_seed == m.rng_seed);
    CHECK(back.norm_tag == m.norm_tag);

    fs::path p = fs::temp_directory_path() / "bsc_net_tests" / "model.bscn";
    fs::create_directories(p.parent_path());
    model_save(m, p.string());
    NetworkModel disk = model_load(p.string());
    CHECK(disk.equals(m));

    SUBCASE("corrupted magic is rejected with location") {
        std::vector<uint8_t> bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_WITH_AS(model_from_bytes(bad.data(), bad.size()),
                             doctest::Contains("magic"), FormatError);
    }
    SUBCASE("truncation is rejected") {
        CHECK_THROWS_AS(model_from_bytes(bytes.data(), bytes.size() / 2), FormatError);
        CHECK_THROWS_AS(model_from_bytes(bytes.data(), 3), FormatError);
    }
    SUBCASE("trailing garbage is rejected") {
        std::vector<uint8_t> padded = bytes;
        padded.push_back(0);
        CHECK_THROWS_AS(model_from_bytes(padded.data(), padded.size()), FormatError);
    }
}
