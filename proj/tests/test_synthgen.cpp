#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "bsc/errors.hpp"
#include "bsc/rng.hpp"
#include "bsc/synthgen.hpp"

using namespace bsc;

namespace {

SynthConfig small_cfg() {
    SynthConfig cfg;
    cfg.slides = 2;
    cfg.viewfields_per_slide = 5;
    cfg.field_h = 120;
    cfg.field_w = 120;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("same seed twice gives byte-identical corpora") {
    SynthConfig cfg = small_cfg();
    Corpus a = generate_corpus(cfg);
    Corpus b = generate_corpus(cfg);
    REQUIRE(a.slides.size() == b.slides.size());
    for (size_t si = 0; si < a.slides.size(); ++si) {
        REQUIRE(a.slides[si].fields.size() == b.slides[si].fields.size());
        for (size_t fi = 0; fi < a.slides[si].fields.size(); ++fi)
            CHECK(a.slides[si].fields[fi].image.equals(b.slides[si].fields[fi].image));
    }
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (size_t i = 0; i < a.annotations.size(); ++i)
        CHECK(a.annotations[i] == b.annotations[i]);

    SynthConfig other = cfg;
    other.seed = 8;
    Corpus c = generate_corpus(other);
    bool differs = c.annotations.size() != a.annotations.size();
    if (!differs && !a.slides.empty() && !a.slides[0].fields.empty())
        differs = !c.slides[0].fields[0].image.equals(a.slides[0].fields[0].image);
    CHECK(differs);
}

TEST_CASE("bacilli range (0,0) yields an all-negative corpus") {
    SynthConfig cfg = small_cfg();
    cfg.bacilli_min = cfg.bacilli_max = 0;
    Corpus c = generate_corpus(cfg);
    CHECK(c.annotations.empty());
    CorpusStats st = corpus_stats(c);
    CHECK(st.positive_patches == 0);
    CHECK(st.negative_patches ==
          static_cast<int64_t>(cfg.slides) * cfg.viewfields_per_slide * 36);
    CHECK(st.annotations == 0);
}

TEST_CASE("view-field k is the canvas window at x = k*step") {
    SynthConfig cfg = small_cfg();
    cfg.overlap_fraction = 0.5;
    cfg.field_w = 200;
    cfg.field_h = 80;
    SlideRender render = render_slide(cfg, derive_seed(cfg.seed, "slide/slide0"));
    CHECK(render.step == 100);

    Corpus c = generate_corpus(cfg);
    const Slide& s0 = c.slides[0];
    REQUIRE(s0.fields.size() == static_cast<size_t>(cfg.viewfields_per_slide));
    for (int k = 0; k < cfg.viewfields_per_slide; ++k) {
        Tensor window = render.canvas.slice_patch(0, k * render.step, cfg.field_h, cfg.field_w);
        CHECK(s0.fields[static_cast<size_t>(k)].image.equals(window));
    }
}

TEST_CASE("annotations are the per-field clipped projections of the canvas rods") {
    SynthConfig cfg = small_cfg();
    cfg.bacilli_min = 1;
    cfg.bacilli_max = 2;
    Corpus c = generate_corpus(cfg);
    SlideRender render = render_slide(cfg, derive_seed(cfg.seed, "slide/slide0"));

    std::map<int, std::vector<BBox>> expected;
    for (int k = 0; k < cfg.viewfields_per_slide; ++k) {
        const int x0 = k * render.step;
        for (const BBox& rod : render.rods) {
            BBox clipped{std::max(rod.x_min - x0, 0), rod.y_min,
                         std::min(rod.x_max - x0, cfg.field_w), rod.y_max};
            if (clipped.x_min < clipped.x_max) expected[k].push_back(clipped);
        }
    }
    std::map<int, std::vector<BBox>> actual;
    for (const Annotation& a : c.annotations)
        if (a.slide_id == "slide0") actual[a.viewfield].push_back(a.bbox);
    CHECK(actual == expected);

    // A rod inside the shared strip of fields k and k+1 appears in both, and
    // the two bboxes project back to the same canvas coordinates.
    int shared = 0;
    for (int k = 0; k + 1 < cfg.viewfields_per_slide; ++k) {
        for (const BBox& rod : render.rods) {
            const int x0 = k * render.step, x1 = (k + 1) * render.step;
            if (rod.x_min >= x1 && rod.x_max <= x0 + cfg.field_w) {
                ++shared;
                BBox in_k{rod.x_min - x0, rod.y_min, rod.x_max - x0, rod.y_max};
                BBox in_k1{rod.x_min - x1, rod.y_min, rod.x_max - x1, rod.y_max};
                CHECK(std::count(expected[k].begin(), expected[k].end(), in_k) > 0);
                CHECK(std::count(expected[k + 1].begin(), expected[k + 1].end(), in_k1) > 0);
            }
        }
    }
    INFO("rods fully inside a shared strip: ", shared);
}

TEST_CASE("every bbox contains at least one stained pixel") {
    SynthConfig cfg = small_cfg();
    cfg.noise_sigma = 0.0;
    cfg.foreground = {200.0f, 200.0f, 40.0f, 40.0f, 100.0f, 100.0f};
    cfg.background = {210.0f, 220.0f, 225.0f, 235.0f, 235.0f, 245.0f};
    cfg.bacilli_min = 1;
    cfg.bacilli_max = 2;
    Corpus c = generate_corpus(cfg);
    REQUIRE(!c.annotations.empty());
    for (const Annotation& a : c.annotations) {
        const Tensor& img = c.slide(a.slide_id).fields[static_cast<size_t>(a.viewfield)].image;
        float best = -1000.0f;
        for (int y = a.bbox.y_min; y < a.bbox.y_max; ++y)
            for (int x = a.bbox.x_min; x < a.bbox.x_max; ++x)
                best = std::max(best, img.at3(y, x, 0) - img.at3(y, x, 1));
        // Background has R-G <= -5; a half-covered rod pixel clears +60.
        CHECK(best > 60.0f);
    }
}

TEST_CASE("corpus_stats hand enumeration on a single field") {
    Corpus c;
    Slide s;
    s.id = "s";
    ViewField vf;
    vf.slide_id = "s";
    vf.index = 0;
    vf.image = Tensor({100, 100, 3}, 50.0f);
    s.fields.push_back(std::move(vf));
    c.slides.push_back(std::move(s));

    SUBCASE("centered 10x6 bbox lights exactly one tile") {
        c.annotations.push_back({"s", 0, {45, 47, 55, 53}});
        CorpusStats st = corpus_stats(c);
        CHECK(st.positive_patches == 1);
        CHECK(st.negative_patches == 24);
        CHECK(st.viewfields == 1);
        CHECK(st.annotations == 1);
    }
    SUBCASE("tile-straddling bbox lights both tiles") {
        c.annotations.push_back({"s", 0, {30, 50, 50, 56}});
        CorpusStats st = corpus_stats(c);
        CHECK(st.positive_patches == 2);
        CHECK(st.negative_patches == 23);
    }
    SUBCASE("empty corpus gives zeros") {
        Corpus empty;
        CorpusStats st = corpus_stats(empty);
        CHECK(st.slides == 0);
        CHECK(st.positive_patches == 0);
        CHECK(st.negative_patches == 0);
    }
}

TEST_CASE("config validation rejects bad ranges") {
    SynthConfig cfg = small_cfg();
    SUBCASE("min above max") {
        cfg.length_min = 20;
        cfg.length_max = 10;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("field too small") {
        cfg.field_h = 30;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("overlap out of range") {
        cfg.overlap_fraction = 1.0;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("negative noise") {
        cfg.noise_sigma = -1.0;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("cluster probability out of range") {
        cfg.cluster_prob = 1.5;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("color range inverted") {
        cfg.foreground.g_lo = 80.0f;
        cfg.foreground.g_hi = 70.0f;
        CHECK_THROWS_AS(validate_synth_config(cfg), ConfigError);
    }
    SUBCASE("generate_corpus surfaces the error too") {
        cfg.bacilli_min = 3;
        cfg.bacilli_max = 1;
        CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
    }
}
