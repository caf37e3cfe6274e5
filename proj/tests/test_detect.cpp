#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bsc/detect.hpp"
#include "bsc/errors.hpp"
#include "bsc/image_io.hpp"
#include "bsc/rng.hpp"
#include "json.hpp"

using namespace bsc;
namespace fs = std::filesystem;

namespace {

ViewField noisy_field(const std::string& slide, int index, int h, int w, uint64_t seed) {
    ViewField vf;
    vf.slide_id = slide;
    vf.index = index;
    vf.image = Tensor({h, w, 3}, 0.0f);
    Rng rng(seed);
    for (int64_t i = 0; i < vf.image.size(); ++i)
        vf.image[i] = static_cast<float>(rng.uniform_int(0, 255));
    return vf;
}

CascadeModel accept_all() {
    return {make_passthrough_model(), make_passthrough_model(), 0.5f, 0.5f};
}

CascadeModel reject_all() {
    NetworkModel veto = make_passthrough_model();
    veto.biases.back()[0] = 30.0f;
    veto.biases.back()[1] = -30.0f;
    return {veto, make_passthrough_model(), 0.5f, 0.5f};
}

// Corpus with a deterministic image and one annotation in the test range.
Corpus eval_corpus() {
    Corpus c;
    Slide s;
    s.id = "s";
    for (int i = 0; i < 5; ++i) s.fields.push_back(noisy_field("s", i, 100, 100, 40 + i));
    c.slides.push_back(std::move(s));
    // n=5 -> train [0,3), unused [3,4), test [4,5).
    c.annotations.push_back({"s", 4, {40, 40, 52, 46}});   // lights tile (40,40)
    c.annotations.push_back({"s", 4, {10, 65, 30, 77}});   // straddles (0,60) and (20,60)
    return c;
}

}  // namespace

TEST_CASE("detect_viewfield tiles the image row-major") {
    ViewField vf = noisy_field("s", 0, 100, 100, 1);
    auto traces = detect_viewfield(vf, accept_all(), 20);
    REQUIRE(traces.size() == 25);
    CHECK(traces[0].origin.top == 0);
    CHECK(traces[0].origin.left == 0);
    CHECK(traces[1].origin.left == 20);
    CHECK(traces[5].origin.top == 20);
    CHECK(traces.back().origin.top == 80);
    CHECK(traces.back().origin.left == 80);
    for (const auto& t : traces) {
        CHECK(t.origin.slide_id == "s");
        CHECK(t.accepted);
        CHECK(t.p1 == 1.0f);
    }

    CHECK(detect_viewfield(vf, accept_all(), 10).size() == 81);
    CHECK(detect_viewfield(vf, accept_all(), 80).size() == 4);
    CHECK(detect_viewfield(vf, accept_all(), 81).size() == 1);

    CHECK_THROWS_AS(detect_viewfield(vf, accept_all(), 0), ConfigError);
    ViewField tiny;
    tiny.image = Tensor({10, 10, 3}, 0.0f);
    CHECK_THROWS_AS(detect_viewfield(tiny, accept_all(), 20), DataError);
    ViewField flat;
    flat.image = Tensor({100, 100}, 0.0f);
    CHECK_THROWS_AS(detect_viewfield(flat, accept_all(), 20), ShapeError);
}

TEST_CASE("detect_viewfield equals a naive per-window loop") {
    ViewField vf = noisy_field("s", 2, 120, 80, 9);
    CascadeModel model;
    model.stage1 = make_default_model(31, 2.449f);
    model.stage2 = make_default_model(32, 2.449f);
    model.threshold1 = 0.4f;
    auto traces = detect_viewfield(vf, model, 20);

    size_t idx = 0;
    for (int top = 0; top + kPatchSize <= 120; top += 20)
        for (int left = 0; left + kPatchSize <= 80; left += 20, ++idx) {
            PatchSample p;
            p.pixels = vf.image.slice_patch(top, left, kPatchSize, kPatchSize);
            p.origin = {"s", 2, top, left};
            StageTrace want = cascade_classify(p, model);
            REQUIRE(idx < traces.size());
            CHECK(traces[idx].origin == want.origin);
            CHECK(traces[idx].p1 == want.p1);
            CHECK(traces[idx].stage1_fired == want.stage1_fired);
            CHECK(traces[idx].p2 == want.p2);
            CHECK(traces[idx].accepted == want.accepted);
        }
    CHECK(idx == traces.size());
}

TEST_CASE("compute_metrics handles zero denominators with null, not fakes") {
    Metrics all_zero = compute_metrics({0, 0, 0, 0});
    CHECK(!all_zero.recall.has_value());
    CHECK(!all_zero.precision.has_value());
    CHECK(!all_zero.accuracy.has_value());

    Metrics no_pos = compute_metrics({0, 0, 10, 0});
    CHECK(!no_pos.recall.has_value());
    CHECK(!no_pos.precision.has_value());
    REQUIRE(no_pos.accuracy.has_value());
    CHECK(*no_pos.accuracy == 1.0);

    Metrics mixed = compute_metrics({6, 2, 90, 2});
    CHECK(*mixed.recall == doctest::Approx(0.75));
    CHECK(*mixed.precision == doctest::Approx(0.75));
    CHECK(*mixed.accuracy == doctest::Approx(0.96));
}

TEST_CASE("tp=31 fn=6 reproduces the 83.78% recall figure") {
    Metrics m = compute_metrics({31, 15, 0, 6});
    REQUIRE(m.recall.has_value());
    CHECK(std::fabs(*m.recall - 0.8378) < 5e-5);
    CHECK(std::round(*m.recall * 10000.0) / 10000.0 == 0.8378);
}

TEST_CASE("evaluate counts match the tiling ground truth") {
    Corpus c = eval_corpus();
    SplitAssignment split = split_corpus(c);

    // Ground truth over the test tiling: 3 positive windows (see eval_corpus).
    DetectionReport acc = evaluate(c, split, accept_all(), 20, {}, true);
    CHECK(acc.counts.tp == 3);
    CHECK(acc.counts.fn == 0);
    CHECK(acc.counts.tn == 0);
    CHECK(acc.counts.fp == 22);
    CHECK(*acc.metrics.recall == 1.0);
    CHECK(*acc.metrics.precision == doctest::Approx(3.0 / 25.0));
    REQUIRE(acc.windows.size() == 25);
    for (const auto& w : acc.windows) {
        int truth = label_patch(w.trace.origin.top, w.trace.origin.left,
                                c.bboxes_for("s", w.trace.origin.viewfield));
        CHECK(w.truth == truth);
    }

    DetectionReport rej = evaluate(c, split, reject_all(), 20);
    CHECK(rej.counts.fn == 3);
    CHECK(rej.counts.tn == 22);
    CHECK(rej.counts.tp == 0);
    CHECK(!rej.metrics.precision.has_value());
    CHECK(*rej.metrics.recall == 0.0);
    CHECK(!rej.warnings.empty());
    CHECK(rej.windows.empty());  // keep_records defaulted off

    SUBCASE("empty test partition is an error") {
        Corpus one;
        Slide s;
        s.id = "x";
        s.fields.push_back(noisy_field("x", 0, 100, 100, 3));
        one.slides.push_back(std::move(s));
        SplitAssignment sp = split_corpus(one);  // n=1: degenerate, no test fields
        CHECK_THROWS_AS(evaluate(one, sp, accept_all(), 20), DataError);
    }
}

TEST_CASE("report counts equal a brute-force recount of its own records") {
    Corpus c = eval_corpus();
    SplitAssignment split = split_corpus(c);
    CascadeModel model;
    model.stage1 = make_default_model(77, 2.449f);
    model.stage2 = make_passthrough_model();
    model.threshold1 = 0.45f;
    DetectionReport rep = evaluate(c, split, model, 20, {}, true);

    ConfusionCounts counted;
    for (const auto& w : rep.windows) {
        if (w.trace.accepted && w.truth == 1) counted.tp++;
        if (w.trace.accepted && w.truth == 0) counted.fp++;
        if (!w.trace.accepted && w.truth == 1) counted.fn++;
        if (!w.trace.accepted && w.truth == 0) counted.tn++;
    }
    CHECK(counted == rep.counts);

    Metrics m = compute_metrics(counted);
    CHECK(m.recall == rep.metrics.recall);
    CHECK(m.precision == rep.metrics.precision);
    CHECK(m.accuracy == rep.metrics.accuracy);
}

TEST_CASE("report_to_json carries counts, nulls, and config echo") {
    Corpus c = eval_corpus();
    SplitAssignment split = split_corpus(c);
    DetectionReport rep = evaluate(c, split, reject_all(), 20, {}, true);
    nlohmann::json j = nlohmann::json::parse(report_to_json(rep));

    CHECK(j["counts"]["fn"] == 3);
    CHECK(j["counts"]["tn"] == 22);
    CHECK(j["metrics"]["precision"].is_null());
    CHECK(j["metrics"]["recall"] == 0.0);
    CHECK(j["config"]["stride"] == 20);
    CHECK(j["windows"].size() == 25);
    bool saw_null_p2 = false;
    for (const auto& w : j["windows"]) saw_null_p2 |= w["p2"].is_null();
    CHECK(saw_null_p2);  // stage 2 never ran, so p2 must serialize as null
}

TEST_CASE("render_overlay strokes decided windows by outcome") {
    ViewField vf;
    vf.slide_id = "s";
    vf.index = 0;
    vf.image = Tensor({60, 60, 3}, 128.0f);

    auto window = [&](int top, int left, bool accepted, int truth) {
        WindowRecord w;
        w.trace.origin = {"s", 0, top, left};
        w.trace.p1 = accepted ? 1.0f : 0.0f;
        w.trace.stage1_fired = accepted;
        if (accepted) w.trace.p2 = 1.0f;
        w.trace.accepted = accepted;
        w.truth = truth;
        return w;
    };
    std::vector<WindowRecord> windows{
        window(0, 0, true, 1),     // TP -> green
        window(0, 20, true, 0),    // FP -> amber
        window(20, 0, false, 1),   // FN -> cyan
        window(20, 20, false, 0),  // TN -> untouched
        window(40, 40, true, -1),  // unknown accepted -> white
    };
    fs::path out = fs::temp_directory_path() / "bsc_overlay.ppm";
    render_overlay(vf, windows, out.string());
    Tensor img = read_ppm(out.string());

    auto px = [&](int y, int x) {
        return std::array<float, 3>{img.at3(y, x, 0), img.at3(y, x, 1), img.at3(y, x, 2)};
    };
    CHECK(px(0, 5) == std::array<float, 3>{0, 200, 0});        // TP border
    CHECK(px(0, 25) == std::array<float, 3>{240, 200, 40});    // FP border
    CHECK(px(20, 5) == std::array<float, 3>{40, 160, 220});    // FN border
    CHECK(px(25, 25) == std::array<float, 3>{128, 128, 128});  // TN untouched
    CHECK(px(40, 45) == std::array<float, 3>{255, 255, 255});  // unknown accepted
    CHECK(px(5, 5) == std::array<float, 3>{128, 128, 128});    // interiors untouched
    CHECK(px(32, 32) == std::array<float, 3>{128, 128, 128});

    SUBCASE("window for another field is rejected") {
        std::vector<WindowRecord> wrong{window(0, 0, true, 1)};
        wrong[0].trace.origin.viewfield = 3;
        CHECK_THROWS_AS(render_overlay(vf, wrong, out.string()), DataError);
    }
    SUBCASE("out-of-bounds window is rejected") {
        std::vector<WindowRecord> oob{window(48, 0, true, 1)};
        CHECK_THROWS_AS(render_overlay(vf, oob, out.string()), BoundsError);
    }
}
