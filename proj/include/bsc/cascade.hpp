#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsc/net.hpp"
#include "bsc/patch.hpp"

namespace bsc {

struct CascadeModel {
    NetworkModel stage1;
    NetworkModel stage2;
    float threshold1 = 0.5f;
    float threshold2 = 0.5f;
};

// Thresholds in (0,1), both stages valid patch classifiers.
void validate_cascade(const CascadeModel& model);

// Per-patch decision record. stage2 probability exists only when stage 1
// fired; the cascade never evaluates stage 2 otherwise.
struct StageTrace {
    PatchOrigin origin;
    float p1 = 0.0f;
    bool stage1_fired = false;
    std::optional<float> p2;
    bool accepted = false;
};

// Stage 1 trains on the balanced patch set; the guard rejects anything else
// so accidental skew cannot sneak into the first stage.
NetworkModel train_stage1(const std::vector<PatchSample>& balanced_samples,
                          const TrainConfig& cfg, TrainTrace* trace = nullptr);

// Stage-1 positives over the exhaustive train tiling, relabeled against
// ground truth: 1 = true positive, 2nd-stage target "keep"; 0 = false
// positive, target "reject".
struct HarvestResult {
    std::vector<PatchSample> samples;
    int64_t true_positives = 0;
    int64_t false_positives = 0;
};

HarvestResult harvest_stage2_set(const NetworkModel& stage1,
                                 const std::vector<PatchSample>& train_tiling,
                                 float threshold1);

// Stage 2 with all weights zero and final biases (-30, +30): every patch
// gets positive probability exactly 1.0f, so the cascade reduces to stage 1.
NetworkModel make_passthrough_model();

// TP-vs-FP classifier. Single-label or empty harvests yield the pass-through
// model (degenerate_out reports it) instead of failing the pipeline; the
// harvested set is itself balanced by undersampling its majority label.
NetworkModel train_stage2(const HarvestResult& harvest, const TrainConfig& cfg,
                          TrainTrace* trace = nullptr, bool* degenerate_out = nullptr);

// Positive iff p1 >= threshold1 and then p2 >= threshold2; stage 2 is
// evaluated only when stage 1 fires.
StageTrace cascade_classify(const PatchSample& patch, const CascadeModel& model);

// Cascade file: magic "BCSC", version u16, two thresholds f32, then the two
// stage models as length-prefixed (u32) model blobs.
constexpr uint16_t kCascadeFormatVersion = 1;

std::vector<uint8_t> cascade_to_bytes(const CascadeModel& model);
CascadeModel cascade_from_bytes(const uint8_t* data, size_t len);
void cascade_save(const CascadeModel& model, const std::string& path);
CascadeModel cascade_load(const std::string& path);

}  // namespace bsc
