#include "bsc/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "bsc/errors.hpp"
#include "bsc/rng.hpp"

namespace bsc {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_range(int lo, int hi, int floor_lo, const char* what) {
    if (lo < floor_lo || hi < lo) {
        throw ConfigError(std::string(what) + " range [" + std::to_string(lo) + "," +
                          std::to_string(hi) + "] invalid (need " +
                          std::to_string(floor_lo) + " <= min <= max)");
    }
}

void check_color_range(const ColorRange& c, const char* what) {
    const float lows[3] = {c.r_lo, c.g_lo, c.b_lo};
    const float highs[3] = {c.r_hi, c.g_hi, c.b_hi};
    for (int i = 0; i < 3; ++i) {
        if (!(lows[i] >= 0.0f) || !(highs[i] <= 255.0f) || lows[i] > highs[i]) {
            throw ConfigError(std::string(what) +
                              " color range must satisfy 0 <= lo <= hi <= 255");
        }
    }
}

struct Vec2 {
    double x, y;
};

double dist_to_segment(double px, double py, Vec2 a, Vec2 b) {
    const double vx = b.x - a.x;
    const double vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((px - a.x) * vx + (py - a.y) * vy) / len2, 0.0, 1.0);
    const double dx = px - (a.x + t * vx);
    const double dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

struct Rod {
    Vec2 p0, p1, p2;  // 2-segment polyline
    double radius;
    float color[3];
};

// Anti-aliased stroke: coverage falls linearly from 1 inside the stroke to 0
// half a pixel outside it. Returns the tight bbox of coverage >= 0.5, empty
// (x_min >= x_max) when nothing crossed the threshold.
BBox blend_rod(Tensor& canvas, const Rod& rod) {
    const int h = canvas.dim(0);
    const int w = canvas.dim(1);
    const double margin = rod.radius + 1.5;
    const int y0 = std::max(0, static_cast<int>(std::floor(
                                   std::min({rod.p0.y, rod.p1.y, rod.p2.y}) - margin)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(
                                       std::max({rod.p0.y, rod.p1.y, rod.p2.y}) + margin)));
    const int x0 = std::max(0, static_cast<int>(std::floor(
                                   std::min({rod.p0.x, rod.p1.x, rod.p2.x}) - margin)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(
                                       std::max({rod.p0.x, rod.p1.x, rod.p2.x}) + margin)));

    BBox box{w, h, 0, 0};  // inverted; grown below
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double d = std::min(
                dist_to_segment(x, y, rod.p0, rod.p1),
                dist_to_segment(x, y, rod.p1, rod.p2));
            const double cov = std::clamp(rod.radius + 0.5 - d, 0.0, 1.0);
            if (cov <= 0.0) continue;
            for (int c = 0; c < 3; ++c) {
                float& px = canvas.at3(y, x, c);
                px += static_cast<float>(cov) * (rod.color[c] - px);
            }
            if (cov >= 0.5) {
                box.x_min = std::min(box.x_min, x);
                box.y_min = std::min(box.y_min, y);
                box.x_max = std::max(box.x_max, x + 1);
                box.y_max = std::max(box.y_max, y + 1);
            }
        }
    }
    return box;
}

float sample_channel(Rng& rng, float lo, float hi) { return rng.uniform(lo, hi); }

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.slides < 1) throw ConfigError("slides must be >= 1");
    if (cfg.viewfields_per_slide < 1) throw ConfigError("viewfields_per_slide must be >= 1");
    if (cfg.field_h < 40 || cfg.field_w < 40) {
        throw ConfigError("field size must be at least 40x40, got " +
                          std::to_string(cfg.field_h) + "x" + std::to_string(cfg.field_w));
    }
    if (!(cfg.overlap_fraction >= 0.0) || !(cfg.overlap_fraction < 1.0)) {
        throw ConfigError("overlap_fraction must lie in [0,1)");
    }
    check_range(cfg.bacilli_min, cfg.bacilli_max, 0, "bacilli_per_field");
    check_range(cfg.length_min, cfg.length_max, 1, "bacillus_length");
    check_range(cfg.width_min, cfg.width_max, 1, "bacillus_width");
    if (!(cfg.cluster_prob >= 0.0 && cfg.cluster_prob <= 1.0)) {
        throw ConfigError("cluster_prob must lie in [0,1]");
    }
    check_range(cfg.cluster_min, cfg.cluster_max, 1, "cluster size");
    check_color_range(cfg.foreground, "foreground");
    check_color_range(cfg.background, "background");
    if (!(cfg.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

SlideRender render_slide(const SynthConfig& cfg, uint64_t slide_seed) {
    validate_synth_config(cfg);
    Rng rng(slide_seed);

    const int fields = cfg.viewfields_per_slide;
    const int step = std::max(
        1, static_cast<int>(std::lround((1.0 - cfg.overlap_fraction) * cfg.field_w)));
    const int canvas_w = step * (fields - 1) + cfg.field_w;
    const int h = cfg.field_h;

    SlideRender out;
    out.step = step;
    out.canvas = Tensor({h, canvas_w, 3}, 0.0f);

    // Background: one base tone per slide plus a slow horizontal tint drift,
    // so overlapping fields share bytes while fields still differ visibly.
    float base[3];
    base[0] = sample_channel(rng, cfg.background.r_lo, cfg.background.r_hi);
    base[1] = sample_channel(rng, cfg.background.g_lo, cfg.background.g_hi);
    base[2] = sample_channel(rng, cfg.background.b_lo, cfg.background.b_hi);
    float amp[3];
    for (float& a : amp) a = rng.uniform(-6.0f, 6.0f);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double cycles = rng.uniform(0.5, 2.5);
    for (int x = 0; x < canvas_w; ++x) {
        const double s =
            std::sin(2.0 * kPi * cycles * x / static_cast<double>(canvas_w) + phase);
        float col[3];
        for (int c = 0; c < 3; ++c) col[c] = base[c] + amp[c] * static_cast<float>(s);
        for (int y = 0; y < h; ++y)
            for (int c = 0; c < 3; ++c) out.canvas.at3(y, x, c) = col[c];
    }

    // Rod events per view-field-sized cell; clusters share a center.
    for (int cell = 0; cell < fields; ++cell) {
        const double cell_x0 = static_cast<double>(cell) * step;
        const int events = rng.uniform_int(cfg.bacilli_min, cfg.bacilli_max);
        for (int e = 0; e < events; ++e) {
            int rods = 1;
            if (rng.next_unit() < cfg.cluster_prob)
                rods = rng.uniform_int(cfg.cluster_min, cfg.cluster_max);
            const double cx = cell_x0 + rng.next_unit() * step;
            const double cy = rng.next_unit() * h;
            for (int r = 0; r < rods; ++r) {
                double mx = cx;
                double my = cy;
                if (rods > 1) {
                    mx += rng.uniform(-0.75, 0.75) * cfg.length_max;
                    my += rng.uniform(-0.75, 0.75) * cfg.length_max;
                }
                const int length = rng.uniform_int(cfg.length_min, cfg.length_max);
                const int width = rng.uniform_int(cfg.width_min, cfg.width_max);
                const double theta = rng.uniform(0.0, 2.0 * kPi);
                const double bend = rng.uniform(-kPi / 6.0, kPi / 6.0);
                Rod rod;
                rod.p1 = {mx, my};
                rod.p0 = {mx - 0.5 * length * std::cos(theta),
                          my - 0.5 * length * std::sin(theta)};
                rod.p2 = {mx + 0.5 * length * std::cos(theta + bend),
                          my + 0.5 * length * std::sin(theta + bend)};
                rod.radius = 0.5 * width;
                rod.color[0] = sample_channel(rng, cfg.foreground.r_lo, cfg.foreground.r_hi);
                rod.color[1] = sample_channel(rng, cfg.foreground.g_lo, cfg.foreground.g_hi);
                rod.color[2] = sample_channel(rng, cfg.foreground.b_lo, cfg.foreground.b_hi);

                const BBox box = blend_rod(out.canvas, rod);
                if (box.x_min < box.x_max && box.y_min < box.y_max)
                    out.rods.push_back(box);
            }
        }
    }

    // Sensor noise, then quantize once so every view-field slice is made of
    // exact byte values (the canvas is the single source of truth).
    float* px = out.canvas.data();
    const int64_t n = out.canvas.size();
    if (cfg.noise_sigma > 0.0) {
        for (int64_t i = 0; i < n; ++i)
            px[i] += static_cast<float>(rng.normal(cfg.noise_sigma));
    }
    for (int64_t i = 0; i < n; ++i)
        px[i] = static_cast<float>(std::clamp<long>(std::lround(px[i]), 0, 255));

    return out;
}

Corpus generate_corpus(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    Corpus corpus;
    for (int s = 0; s < cfg.slides; ++s) {
        const std::string id = "slide" + std::to_string(s);
        const SlideRender render =
            render_slide(cfg, derive_seed(cfg.seed, "slide/" + id));

        Slide slide;
        slide.id = id;
        for (int k = 0; k < cfg.viewfields_per_slide; ++k) {
            ViewField vf;
            vf.slide_id = id;
            vf.index = k;
            vf.image = render.canvas.slice_patch(0, k * render.step, cfg.field_h,
                                                 cfg.field_w);
            slide.fields.push_back(std::move(vf));
        }
        corpus.slides.push_back(std::move(slide));

        // Project each rod into every view-field it intersects.
        for (const BBox& rod : render.rods) {
            for (int k = 0; k < cfg.viewfields_per_slide; ++k) {
                const int x0 = k * render.step;
                const int ix_min = std::max(rod.x_min - x0, 0);
                const int ix_max = std::min(rod.x_max - x0, cfg.field_w);
                if (ix_min >= ix_max) continue;
                corpus.annotations.push_back(
                    {id, k, {ix_min, rod.y_min, ix_max, rod.y_max}});
            }
        }
    }
    return corpus;
}

CorpusStats corpus_stats(const Corpus& corpus, const LabelConfig& cfg) {
    CorpusStats st;
    st.slides = static_cast<int>(corpus.slides.size());
    st.annotations = static_cast<int64_t>(corpus.annotations.size());
    for (const Slide& s : corpus.slides) {
        for (const ViewField& vf : s.fields) {
            ++st.viewfields;
            const std::vector<BBox> boxes = corpus.bboxes_for(s.id, vf.index);
            const int h = vf.image.dim(0);
            const int w = vf.image.dim(1);
            for (int top = 0; top + kPatchSize <= h; top += kPatchSize) {
                for (int left = 0; left + kPatchSize <= w; left += kPatchSize) {
                    if (label_patch(top, left, boxes, cfg) == 1)
                        ++st.positive_patches;
                    else
                        ++st.negative_patches;
                }
            }
        }
    }
    return st;
}

}  // namespace bsc
