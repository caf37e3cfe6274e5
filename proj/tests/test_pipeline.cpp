#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bsc/errors.hpp"
#include "bsc/pipeline.hpp"
#include "json.hpp"

using namespace bsc;
namespace fs = std::filesystem;

namespace {

// Small corpus + short schedule so orchestration tests stay fast.
RunConfig tiny_config() {
    RunConfig cfg;
    cfg.synth.slides = 2;
    cfg.synth.viewfields_per_slide = 10;
    cfg.synth.field_h = 100;
    cfg.synth.field_w = 100;
    cfg.synth.bacilli_min = 1;
    cfg.synth.bacilli_max = 2;
    cfg.synth.seed = cfg.seed;
    cfg.train.epochs = 12;
    cfg.train.batch_size = 8;
    cfg.train.weight_init_scale = 2.449f;  // He-uniform
    return cfg;
}

}  // namespace

TEST_CASE("validate_run_config rejects out-of-range fields") {
    RunConfig ok;
    CHECK_NOTHROW(validate_run_config(ok));

    RunConfig c = ok;
    c.fractions = {0.5, 0.2, 0.2};
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.fractions = {0.8, -0.2, 0.4};
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.threshold1 = 0.0f;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.threshold2 = 1.0f;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.stride = 0;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.label.min_overlap = 0.0f;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.label.min_overlap = 1.0f;  // boundary is inclusive
    CHECK_NOTHROW(validate_run_config(c));
    c = ok;
    c.train.epochs = 0;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.train.batch_size = 0;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.train.learning_rate = -0.1f;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.train.learning_rate = 0.0f;  // frozen training is allowed
    CHECK_NOTHROW(validate_run_config(c));
    c = ok;
    c.train.weight_init_scale = 0.0f;
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
    c = ok;
    c.synth.field_h = 10;  // synth validation must surface through
    CHECK_THROWS_AS(validate_run_config(c), ConfigError);
}

TEST_CASE("run config JSON round-trips every field") {
    RunConfig cfg;
    cfg.seed = 1234;
    cfg.fractions = {0.7, 0.1, 0.2};
    cfg.label.min_overlap = 0.4f;
    cfg.train.learning_rate = 0.02f;
    cfg.train.epochs = 7;
    cfg.train.batch_size = 16;
    cfg.train.weight_init_scale = 1.5f;
    cfg.threshold1 = 0.31f;
    cfg.threshold2 = 0.62f;
    cfg.stride = 10;
    cfg.stage2_enabled = false;
    cfg.synth.slides = 3;
    cfg.synth.field_h = 120;
    cfg.synth.noise_sigma = 4.5;
    cfg.synth.foreground = {1, 2, 3, 4, 5, 6};

    RunConfig back = run_config_from_json(run_config_to_json(cfg));
    CHECK(back.seed == cfg.seed);
    CHECK(back.fractions.train == cfg.fractions.train);
    CHECK(back.fractions.unused == cfg.fractions.unused);
    CHECK(back.fractions.test == cfg.fractions.test);
    CHECK(back.label.min_overlap == cfg.label.min_overlap);
    CHECK(back.train.learning_rate == cfg.train.learning_rate);
    CHECK(back.train.epochs == cfg.train.epochs);
    CHECK(back.train.batch_size == cfg.train.batch_size);
    CHECK(back.train.weight_init_scale == cfg.train.weight_init_scale);
    CHECK(back.threshold1 == cfg.threshold1);
    CHECK(back.threshold2 == cfg.threshold2);
    CHECK(back.stride == cfg.stride);
    CHECK(back.stage2_enabled == cfg.stage2_enabled);
    CHECK(back.synth.slides == cfg.synth.slides);
    CHECK(back.synth.field_h == cfg.synth.field_h);
    CHECK(back.synth.noise_sigma == cfg.synth.noise_sigma);
    CHECK(back.synth.foreground.g_lo == 3.0f);
    CHECK(back.synth.background.r_lo == RunConfig{}.synth.background.r_lo);
}

TEST_CASE("partial config keeps defaults for missing keys") {
    RunConfig cfg = run_config_from_json(R"({"seed": 7, "train": {"epochs": 3}})");
    CHECK(cfg.seed == 7);
    CHECK(cfg.train.epochs == 3);
    RunConfig defaults;
    CHECK(cfg.train.learning_rate == defaults.train.learning_rate);
    CHECK(cfg.stride == defaults.stride);
    CHECK(cfg.synth.slides == defaults.synth.slides);

    SUBCASE("explicit base wins over built-in defaults") {
        RunConfig base;
        base.stride = 10;
        RunConfig merged = run_config_from_json(R"({"seed": 9})", base);
        CHECK(merged.stride == 10);
        CHECK(merged.seed == 9);
    }
}

TEST_CASE("unknown or ill-typed config keys are located, not ignored") {
    CHECK_THROWS_WITH_AS(run_config_from_json(R"({"stride_px": 20})"),
                         doctest::Contains("stride_px"), ConfigError);
    CHECK_THROWS_WITH_AS(run_config_from_json(R"({"train": {"lr": 0.1}})"),
                         doctest::Contains("train.lr"), ConfigError);
    CHECK_THROWS_WITH_AS(run_config_from_json(R"({"synth": {"debris": 1}})"),
                         doctest::Contains("synth.debris"), ConfigError);
    CHECK_THROWS_WITH_AS(run_config_from_json(R"({"stride": "20"})"),
                         doctest::Contains("stride"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"({"seed": -4})"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(R"([1,2,3])"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json("{not json"), FormatError);
    // values that parse but violate validation
    CHECK_THROWS_AS(run_config_from_json(R"({"thresholds": {"stage1": 1.5}})"), ConfigError);
}

TEST_CASE("architecture echo is verified, not trusted") {
    RunConfig cfg;
    nlohmann::json j = nlohmann::json::parse(run_config_to_json(cfg));
    REQUIRE(j.contains("architecture"));
    CHECK_NOTHROW(run_config_from_json(j.dump()));  // faithful echo is accepted

    j["architecture"][0]["out_c"] = 99;
    CHECK_THROWS_WITH_AS(run_config_from_json(j.dump()),
                         doctest::Contains("architecture"), ConfigError);
}

TEST_CASE("load_run_config reports the file it failed on") {
    CHECK_THROWS_AS(load_run_config("/nonexistent/cfg.json"), IoError);

    fs::path p = fs::temp_directory_path() / "bsc_cfg_broken.json";
    std::ofstream(p) << "{broken";
    CHECK_THROWS_WITH_AS(load_run_config(p.string()),
                         doctest::Contains(p.string().c_str()), FormatError);

    fs::path good = fs::temp_directory_path() / "bsc_cfg_good.json";
    std::ofstream(good) << R"({"seed": 11, "stride": 5})";
    RunConfig cfg = load_run_config(good.string());
    CHECK(cfg.seed == 11);
    CHECK(cfg.stride == 5);
}

TEST_CASE("run_train wires the stages together deterministically") {
    RunConfig cfg = tiny_config();
    Corpus corpus = generate_corpus(cfg.synth);

    TrainOutcome a = run_train(corpus, cfg);
    CHECK(a.balanced_train_size > 0);
    CHECK(a.balanced_train_size % 2 == 0);  // balanced: equal class counts
    CHECK(a.cascade.threshold1 == cfg.threshold1);
    CHECK(a.cascade.threshold2 == cfg.threshold2);
    CHECK(a.stage1_trace.epoch_mean_loss.size() == size_t(cfg.train.epochs));
    CHECK(a.train_tiling_size > a.harvest_tp + a.harvest_fp - 1);  // harvest <= tiling

    TrainOutcome b = run_train(corpus, cfg);
    CHECK(cascade_to_bytes(a.cascade) == cascade_to_bytes(b.cascade));

    SUBCASE("stage2 off yields a pass-through second stage and no harvest") {
        cfg.stage2_enabled = false;
        TrainOutcome off = run_train(corpus, cfg);
        CHECK(off.train_tiling_size == 0);
        CHECK(off.harvest_tp == 0);
        CHECK(off.harvest_fp == 0);
        // stage 1 must be unaffected by the ablation switch
        CHECK(model_to_bytes(off.cascade.stage1) == model_to_bytes(a.cascade.stage1));
        PatchSample p;
        p.pixels = corpus.slides[0].fields[0].image.slice_patch(0, 0, 20, 20);
        StageTrace tr = cascade_classify(p, off.cascade);
        if (tr.stage1_fired) {
            REQUIRE(tr.p2.has_value());
            CHECK(*tr.p2 == 1.0f);
        }
    }
}

TEST_CASE("run_eval evaluates the test partition only") {
    RunConfig cfg = tiny_config();
    Corpus corpus = generate_corpus(cfg.synth);
    CascadeModel model{make_passthrough_model(), make_passthrough_model(), 0.5f, 0.5f};

    DetectionReport rep = run_eval(corpus, model, cfg, false);
    // 2 slides x 2 test fields x 25 windows on a 100x100 field
    CHECK(rep.counts.total() == 100);
    CHECK(rep.stride == cfg.stride);
    CHECK(rep.threshold1 == model.threshold1);

    cfg.stride = 10;
    CHECK(run_eval(corpus, model, cfg, false).counts.total() == 4 * 81);
}

TEST_CASE("write_eval_overlays emits one image per test field") {
    RunConfig cfg = tiny_config();
    Corpus corpus = generate_corpus(cfg.synth);
    CascadeModel model{make_passthrough_model(), make_passthrough_model(), 0.5f, 0.5f};
    DetectionReport rep = run_eval(corpus, model, cfg, true);
    SplitAssignment split = split_corpus(corpus, cfg.fractions);

    fs::path dir = fs::temp_directory_path() / "bsc_overlays";
    fs::remove_all(dir);
    std::vector<std::string> files = write_eval_overlays(corpus, split, rep, dir.string());
    CHECK(files.size() == 4);
    for (const std::string& f : files) CHECK(fs::exists(f));
    CHECK(files[0].find("slide0_8") != std::string::npos);

    SUBCASE("records are required") {
        DetectionReport bare = run_eval(corpus, model, cfg, false);
        CHECK_THROWS_AS(write_eval_overlays(corpus, split, bare, dir.string()),
                        ConfigError);
    }
}
