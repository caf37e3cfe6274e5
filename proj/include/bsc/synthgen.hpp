#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsc/corpus.hpp"

namespace bsc {

// Per-channel byte-scale sampling range, lo <= hi, within [0, 255].
struct ColorRange {
    float r_lo, r_hi;
    float g_lo, g_hi;
    float b_lo, b_hi;
};

struct SynthConfig {
    uint64_t seed = 42;
    int slides = 6;
    int viewfields_per_slide = 24;
    int field_h = 300;
    int field_w = 300;
    // Fraction of field width shared by consecutive view-fields.
    double overlap_fraction = 0.5;
    // Rod events drawn per view-field-sized cell of the slide canvas.
    int bacilli_min = 0;
    int bacilli_max = 1;
    int length_min = 30;  // px along the rod
    int length_max = 44;
    int width_min = 6;    // stroke width px
    int width_max = 9;
    // An event becomes a cluster of several rods around a shared center.
    double cluster_prob = 0.35;
    int cluster_min = 2;
    int cluster_max = 4;
    // Carbol-fuchsin-like foreground on a pale blue background.
    ColorRange foreground{150.0f, 215.0f, 60.0f, 160.0f, 100.0f, 190.0f};
    ColorRange background{195.0f, 225.0f, 205.0f, 235.0f, 230.0f, 250.0f};
    double noise_sigma = 10.0;  // byte scale, applied per pixel per channel
};

// Throws ConfigError on any range violation.
void validate_synth_config(const SynthConfig& cfg);

// One rendered slide: a single wide canvas from which the overlapping
// view-fields are cut. Exposed separately so tests can check the window
// arithmetic against the canvas itself.
struct SlideRender {
    Tensor canvas;           // [field_h, canvas_w, 3], quantized byte values
    std::vector<BBox> rods;  // tight boxes in canvas coordinates, half-open
    int step = 0;            // x offset between consecutive view-fields
};

SlideRender render_slide(const SynthConfig& cfg, uint64_t slide_seed);

// Full corpus: slides named "slide0".."slideN-1", per-slide seeds derived
// from cfg.seed, every rod annotated in each view-field it intersects.
Corpus generate_corpus(const SynthConfig& cfg);

struct CorpusStats {
    int slides = 0;
    int64_t viewfields = 0;
    int64_t annotations = 0;
    // Stride-20 tiling over every view-field, labeled with label_patch.
    int64_t positive_patches = 0;
    int64_t negative_patches = 0;
};

CorpusStats corpus_stats(const Corpus& corpus, const LabelConfig& cfg = {});

}  // namespace bsc
