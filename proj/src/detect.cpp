#include "bsc/detect.hpp"

#include <algorithm>
#include <cmath>

#include "bsc/errors.hpp"
#include "bsc/image_io.hpp"
#include "json.hpp"

namespace bsc {

std::vector<StageTrace> detect_viewfield(const ViewField& vf, const CascadeModel& model,
                                         int stride) {
    if (stride < 1) throw ConfigError("detection stride must be >= 1");
    validate_cascade(model);
    if (vf.image.rank() != 3 || vf.image.dim(2) != kPatchChannels) {
        throw ShapeError("view-field image must be [H,W,3], got " +
                         vf.image.shape_string());
    }
    const int h = vf.image.dim(0);
    const int w = vf.image.dim(1);
    if (h < kPatchSize || w < kPatchSize) {
        throw DataError("view-field " + vf.slide_id + "/" + std::to_string(vf.index) +
                        " (" + std::to_string(h) + "x" + std::to_string(w) +
                        ") is smaller than a patch");
    }

    const int rows = (h - kPatchSize) / stride + 1;
    const int cols = (w - kPatchSize) / stride + 1;
    const int64_t n = static_cast<int64_t>(rows) * cols;
    std::vector<StageTrace> out(static_cast<size_t>(n));

    auto classify_at = [&](int64_t i) {
        const int top = static_cast<int>(i / cols) * stride;
        const int left = static_cast<int>(i % cols) * stride;
        PatchSample s;
        s.pixels = vf.image.slice_patch(top, left, kPatchSize, kPatchSize);
        s.origin = {vf.slide_id, vf.index, top, left};
        out[static_cast<size_t>(i)] = cascade_classify(s, model);
    };

    // First window runs serially so a model-level fault (bad chain,
    // non-finite weights) surfaces as an exception before the parallel region,
    // where a throw would abort.
    classify_at(0);
#pragma omp parallel for schedule(static) if (n > 2)
    for (int64_t i = 1; i < n; ++i) classify_at(i);
    return out;
}

Metrics compute_metrics(const ConfusionCounts& c) {
    Metrics m;
    if (c.tp + c.fn > 0)
        m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tp + c.fp > 0)
        m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.total() > 0)
        m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return m;
}

DetectionReport evaluate(const Corpus& corpus, const SplitAssignment& split,
                         const CascadeModel& model, int stride,
                         const LabelConfig& label_cfg, bool keep_records) {
    DetectionReport rep;
    rep.stride = stride;
    rep.threshold1 = model.threshold1;
    rep.threshold2 = model.threshold2;
    rep.label_min_overlap = label_cfg.min_overlap;

    int64_t fields_seen = 0;
    for (const Slide& s : corpus.slides) {
        const IndexRange r = split.for_slide(s.id).test;
        for (int i = r.begin; i < r.end; ++i) {
            if (i < 0 || static_cast<size_t>(i) >= s.fields.size()) {
                throw DataError("split test range index " + std::to_string(i) +
                                " exceeds slide \"" + s.id + "\"");
            }
            const ViewField& vf = s.fields[static_cast<size_t>(i)];
            ++fields_seen;
            const std::vector<BBox> boxes = corpus.bboxes_for(s.id, i);
            const std::vector<StageTrace> traces = detect_viewfield(vf, model, stride);
            for (const StageTrace& tr : traces) {
                const int truth =
                    label_patch(tr.origin.top, tr.origin.left, boxes, label_cfg);
                if (tr.accepted)
                    (truth == 1 ? rep.counts.tp : rep.counts.fp) += 1;
                else
                    (truth == 1 ? rep.counts.fn : rep.counts.tn) += 1;
                if (keep_records) rep.windows.push_back({tr, truth});
            }
        }
    }
    if (fields_seen == 0) throw DataError("evaluate: test partition has no view-fields");

    rep.metrics = compute_metrics(rep.counts);
    if (!rep.metrics.recall.has_value())
        rep.warnings.push_back("no positive windows in the test partition; recall undefined");
    if (!rep.metrics.precision.has_value())
        rep.warnings.push_back("no accepted windows; precision undefined");
    return rep;
}

std::string report_to_json(const DetectionReport& rep) {
    nlohmann::json j;
    j["counts"] = {{"tp", rep.counts.tp},
                   {"fp", rep.counts.fp},
                   {"tn", rep.counts.tn},
                   {"fn", rep.counts.fn},
                   {"total", rep.counts.total()}};
    auto metric = [](const std::optional<double>& v) {
        return v.has_value() ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    j["metrics"] = {{"recall", metric(rep.metrics.recall)},
                    {"precision", metric(rep.metrics.precision)},
                    {"accuracy", metric(rep.metrics.accuracy)}};
    j["config"] = {{"stride", rep.stride},
                   {"threshold1", rep.threshold1},
                   {"threshold2", rep.threshold2},
                   {"label_min_overlap", rep.label_min_overlap}};
    j["warnings"] = rep.warnings;
    if (!rep.windows.empty()) {
        nlohmann::json rows = nlohmann::json::array();
        for (const WindowRecord& w : rep.windows) {
            nlohmann::json row = {{"slide", w.trace.origin.slide_id},
                                  {"viewfield", w.trace.origin.viewfield},
                                  {"top", w.trace.origin.top},
                                  {"left", w.trace.origin.left},
                                  {"p1", w.trace.p1},
                                  {"stage1_fired", w.trace.stage1_fired},
                                  {"accepted", w.trace.accepted}};
            row["p2"] = w.trace.p2.has_value() ? nlohmann::json(*w.trace.p2)
                                               : nlohmann::json(nullptr);
            row["truth"] = w.truth >= 0 ? nlohmann::json(w.truth) : nlohmann::json(nullptr);
            rows.push_back(std::move(row));
        }
        j["windows"] = std::move(rows);
    }
    return j.dump(2);
}

namespace {

void stroke_window(Tensor& img, int top, int left, const float rgb[3]) {
    const int b = kPatchSize - 1;
    for (int x = 0; x < kPatchSize; ++x) {
        for (int c = 0; c < 3; ++c) {
            img.at3(top, left + x, c) = rgb[c];
            img.at3(top + b, left + x, c) = rgb[c];
        }
    }
    for (int y = 1; y < b; ++y) {
        for (int c = 0; c < 3; ++c) {
            img.at3(top + y, left, c) = rgb[c];
            img.at3(top + y, left + b, c) = rgb[c];
        }
    }
}

}  // namespace

void render_overlay(const ViewField& vf, const std::vector<WindowRecord>& windows,
                    const std::string& out_path) {
    constexpr float kTp[3] = {0.0f, 200.0f, 0.0f};
    constexpr float kFp[3] = {240.0f, 200.0f, 40.0f};
    constexpr float kFn[3] = {40.0f, 160.0f, 220.0f};
    constexpr float kUnknown[3] = {255.0f, 255.0f, 255.0f};

    Tensor img = vf.image;
    const int h = img.dim(0);
    const int w = img.dim(1);
    for (const WindowRecord& rec : windows) {
        const PatchOrigin& o = rec.trace.origin;
        if (o.slide_id != vf.slide_id || o.viewfield != vf.index) {
            throw DataError("overlay: window from " + o.slide_id + "/" +
                            std::to_string(o.viewfield) + " does not belong to " +
                            vf.slide_id + "/" + std::to_string(vf.index));
        }
        if (o.top < 0 || o.left < 0 || o.top + kPatchSize > h || o.left + kPatchSize > w) {
            throw BoundsError("overlay: window at (" + std::to_string(o.top) + "," +
                              std::to_string(o.left) + ") outside image");
        }
        const float* color = nullptr;
        if (rec.truth < 0) {
            if (rec.trace.accepted) color = kUnknown;
        } else if (rec.trace.accepted) {
            color = rec.truth == 1 ? kTp : kFp;
        } else if (rec.truth == 1) {
            color = kFn;
        }
        if (color != nullptr) stroke_window(img, o.top, o.left, color);
    }
    write_image(img, out_path);
}

}  // namespace bsc
