#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bsc/cascade.hpp"
#include "bsc/corpus.hpp"

namespace bsc {

// Cascade decisions for every window at (r*stride, c*stride) that fits the
// view-field, ordered row-major. Throws DataError when the image is smaller
// than a patch, ConfigError when stride < 1.
std::vector<StageTrace> detect_viewfield(const ViewField& vf, const CascadeModel& model,
                                         int stride);

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t tn = 0;
    int64_t fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// Zero denominators leave a metric disengaged (reported as null, never as a
// fake 0 or 1).
struct Metrics {
    std::optional<double> recall;     // tp / (tp+fn)
    std::optional<double> precision;  // tp / (tp+fp)
    std::optional<double> accuracy;   // (tp+tn) / total
};

Metrics compute_metrics(const ConfusionCounts& counts);

struct WindowRecord {
    StageTrace trace;
    int truth = -1;  // 0/1 ground truth, -1 when unknown
};

struct DetectionReport {
    ConfusionCounts counts;
    Metrics metrics;
    std::vector<WindowRecord> windows;  // filled when keep_records
    std::vector<std::string> warnings;
    // Config echo
    int stride = 20;
    float threshold1 = 0.5f;
    float threshold2 = 0.5f;
    float label_min_overlap = 0.25f;
};

// Stride-tiled evaluation over the split's test partition with ground truth
// from label_patch. Emits a warning (not an error) when a metric is
// undefined. Throws DataError when the test partition has no view-fields.
DetectionReport evaluate(const Corpus& corpus, const SplitAssignment& split,
                         const CascadeModel& model, int stride,
                         const LabelConfig& label_cfg = {}, bool keep_records = false);

std::string report_to_json(const DetectionReport& report);

// Copy of the view-field with a 1-px border stroked around decided windows:
// green TP, amber FP, cyan FN when ground truth is present; white for
// accepted windows of unknown truth. True negatives are left untouched, so a
// run with nothing to mark writes a pixel-identical copy.
void render_overlay(const ViewField& vf, const std::vector<WindowRecord>& windows,
                    const std::string& out_path);

}  // namespace bsc
