#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsc/cascade.hpp"
#include "bsc/corpus.hpp"
#include "bsc/detect.hpp"
#include "bsc/synthgen.hpp"

namespace bsc {

// One config drives the whole pipeline. Every random draw anywhere is
// derived from `seed` by name, so ablations share data splits.
struct RunConfig {
    uint64_t seed = 42;
    SynthConfig synth;           // cmd synth (synth.seed is overridden by seed)
    SplitFractions fractions;
    LabelConfig label;
    TrainConfig train;           // shared by both stages; per-stage seeds derived
    float threshold1 = 0.5f;
    float threshold2 = 0.5f;
    int stride = 20;
    bool stage2_enabled = true;
};

void validate_run_config(const RunConfig& cfg);

// JSON round-trip. from_json accepts a partial object (missing keys keep
// defaults) and rejects unknown keys so typos don't silently vanish.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

struct TrainOutcome {
    CascadeModel cascade;
    TrainTrace stage1_trace;
    TrainTrace stage2_trace;
    int64_t harvest_tp = 0;
    int64_t harvest_fp = 0;
    bool stage2_degenerate = false;
    int64_t balanced_train_size = 0;
    int64_t train_tiling_size = 0;
};

// split -> balanced extract -> stage 1 -> harvest over the full train tiling
// -> stage 2. With stage2_enabled false, stage 2 is the pass-through model
// and no harvest runs.
TrainOutcome run_train(const Corpus& corpus, const RunConfig& cfg);

// Test-partition evaluation of a trained (or loaded) cascade.
DetectionReport run_eval(const Corpus& corpus, const CascadeModel& model,
                         const RunConfig& cfg, bool keep_records);

// Overlay images for every test-partition view-field, named
// <slide>_<index>.<ext> under out_dir. Returns the files written.
std::vector<std::string> write_eval_overlays(const Corpus& corpus,
                                             const SplitAssignment& split,
                                             const DetectionReport& report,
                                             const std::string& out_dir,
                                             const std::string& image_ext = "ppm");

}  // namespace bsc
