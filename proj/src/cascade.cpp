#include "bsc/cascade.hpp"

#include <algorithm>
#include <utility>

#include "bsc/byteio.hpp"
#include "bsc/errors.hpp"
#include "bsc/rng.hpp"

namespace bsc {

void validate_cascade(const CascadeModel& model) {
    if (!(model.threshold1 > 0.0f && model.threshold1 < 1.0f) ||
        !(model.threshold2 > 0.0f && model.threshold2 < 1.0f)) {
        throw ConfigError("cascade thresholds must lie in (0,1), got " +
                          std::to_string(model.threshold1) + " and " +
                          std::to_string(model.threshold2));
    }
    validate_patch_architecture(model.stage1);
    validate_patch_architecture(model.stage2);
}

NetworkModel train_stage1(const std::vector<PatchSample>& balanced_samples,
                          const TrainConfig& cfg, TrainTrace* trace) {
    int64_t pos = 0;
    int64_t neg = 0;
    for (const PatchSample& s : balanced_samples) (s.label == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0 || pos != neg) {
        throw DataError("stage 1 requires a balanced training set, got " +
                        std::to_string(pos) + " positive / " + std::to_string(neg) +
                        " negative samples");
    }
    NetworkModel model =
        make_network(default_patch_layers(),
                     derive_seed(cfg.seed, "stage1/init"), cfg.weight_init_scale);
    TrainConfig stage_cfg = cfg;
    stage_cfg.seed = derive_seed(cfg.seed, "stage1/train");
    TrainTrace t = sgd_train(model, balanced_samples, stage_cfg);
    if (trace != nullptr) *trace = std::move(t);
    return model;
}

HarvestResult harvest_stage2_set(const NetworkModel& stage1,
                                 const std::vector<PatchSample>& train_tiling,
                                 float threshold1) {
    validate_patch_architecture(stage1);
    if (train_tiling.empty()) throw DataError("harvest: empty train tiling");

    const int64_t n = static_cast<int64_t>(train_tiling.size());
    std::vector<float> prob(train_tiling.size(), 0.0f);
    std::vector<uint8_t> bad_label(train_tiling.size(), 0);
#pragma omp parallel for schedule(static) if (n > 1)
    for (int64_t i = 0; i < n; ++i) {
        const PatchSample& s = train_tiling[static_cast<size_t>(i)];
        if (s.label != 0 && s.label != 1) {
            bad_label[static_cast<size_t>(i)] = 1;
            continue;
        }
        prob[static_cast<size_t>(i)] = positive_probability(s.pixels, stage1);
    }
    for (size_t i = 0; i < train_tiling.size(); ++i) {
        if (bad_label[i]) {
            throw DataError("harvest: sample " + std::to_string(i) +
                            " has label " + std::to_string(train_tiling[i].label));
        }
    }

    HarvestResult hr;
    for (size_t i = 0; i < train_tiling.size(); ++i) {
        if (prob[i] < threshold1) continue;
        PatchSample s = train_tiling[i];
        (s.label == 1 ? hr.true_positives : hr.false_positives) += 1;
        // Ground-truth label doubles as the stage-2 target: keep TPs, drop FPs.
        hr.samples.push_back(std::move(s));
    }
    if (hr.samples.empty()) {
        throw DataError("harvest: stage 1 fired on none of " +
                        std::to_string(train_tiling.size()) +
                        " train patches; stage 1 is unusable");
    }
    return hr;
}

NetworkModel make_passthrough_model() {
    NetworkModel model = make_default_model(0);
    for (Tensor& w : model.weights)
        for (int64_t j = 0; j < w.size(); ++j) w[j] = 0.0f;
    for (Tensor& b : model.biases)
        for (int64_t j = 0; j < b.size(); ++j) b[j] = 0.0f;
    // Logit gap 60 saturates float softmax: positive probability == 1.0f.
    Tensor& final_bias = model.biases.back();
    final_bias[0] = -30.0f;
    final_bias[1] = 30.0f;
    return model;
}

NetworkModel train_stage2(const HarvestResult& harvest, const TrainConfig& cfg,
                          TrainTrace* trace, bool* degenerate_out) {
    if (degenerate_out != nullptr) *degenerate_out = false;

    std::vector<const PatchSample*> keep;   // label 1 (stage-1 TPs)
    std::vector<const PatchSample*> drop;   // label 0 (stage-1 FPs)
    for (const PatchSample& s : harvest.samples) {
        if (s.label == 1)
            keep.push_back(&s);
        else
            drop.push_back(&s);
    }
    if (keep.empty() || drop.empty()) {
        if (degenerate_out != nullptr) *degenerate_out = true;
        if (trace != nullptr) trace->epoch_mean_loss.clear();
        return make_passthrough_model();
    }

    // Balance the harvest itself: undersample whichever side dominates.
    std::vector<const PatchSample*>& majority = keep.size() > drop.size() ? keep : drop;
    const size_t target = std::min(keep.size(), drop.size());
    if (majority.size() > target) {
        Rng rng(derive_seed(cfg.seed, "stage2/undersample"));
        for (size_t i = 0; i < target; ++i) {
            const size_t j = i + rng.bounded(majority.size() - i);
            std::swap(majority[i], majority[j]);
        }
        majority.resize(target);
        // Restore harvest order so the training set is canonical.
        std::sort(majority.begin(), majority.end());
    }

    std::vector<PatchSample> train;
    train.reserve(2 * target);
    for (const PatchSample* p : keep) train.push_back(*p);
    for (const PatchSample* p : drop) train.push_back(*p);

    NetworkModel model =
        make_network(default_patch_layers(),
                     derive_seed(cfg.seed, "stage2/init"), cfg.weight_init_scale);
    TrainConfig stage_cfg = cfg;
    stage_cfg.seed = derive_seed(cfg.seed, "stage2/train");
    TrainTrace t = sgd_train(model, train, stage_cfg);
    if (trace != nullptr) *trace = std::move(t);
    return model;
}

StageTrace cascade_classify(const PatchSample& patch, const CascadeModel& model) {
    StageTrace tr;
    tr.origin = patch.origin;
    tr.p1 = positive_probability(patch.pixels, model.stage1);
    tr.stage1_fired = tr.p1 >= model.threshold1;
    if (tr.stage1_fired) {
        tr.p2 = positive_probability(patch.pixels, model.stage2);
        tr.accepted = *tr.p2 >= model.threshold2;
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kCascadeMagic[4] = {'B', 'C', 'S', 'C'};
}

std::vector<uint8_t> cascade_to_bytes(const CascadeModel& model) {
    using namespace byteio;
    validate_cascade(model);
    std::vector<uint8_t> out;
    out.insert(out.end(), kCascadeMagic, kCascadeMagic + 4);
    put_u16(out, kCascadeFormatVersion);
    put_f32(out, model.threshold1);
    put_f32(out, model.threshold2);
    for (const NetworkModel* stage : {&model.stage1, &model.stage2}) {
        const std::vector<uint8_t> blob = model_to_bytes(*stage);
        if (blob.size() > 0xffffffffull)
            throw FormatError("cascade file: stage blob too large");
        put_u32(out, static_cast<uint32_t>(blob.size()));
        out.insert(out.end(), blob.begin(), blob.end());
    }
    return out;
}

CascadeModel cascade_from_bytes(const uint8_t* data, size_t len) {
    byteio::Reader r{data, len, "cascade file"};
    r.expect_magic(kCascadeMagic);
    const uint16_t version = r.u16("format version");
    if (version != kCascadeFormatVersion) {
        throw FormatError("cascade file: unsupported format version " +
                          std::to_string(version) + " at offset 4");
    }
    CascadeModel model;
    model.threshold1 = r.f32("threshold 1");
    model.threshold2 = r.f32("threshold 2");
    if (!(model.threshold1 > 0.0f && model.threshold1 < 1.0f) ||
        !(model.threshold2 > 0.0f && model.threshold2 < 1.0f)) {
        throw FormatError("cascade file: thresholds at offset 6 must lie in (0,1)");
    }
    for (NetworkModel* stage : {&model.stage1, &model.stage2}) {
        const size_t at = r.pos;
        const uint32_t blob_len = r.u32("stage blob length");
        if (r.remaining() < blob_len) {
            throw FormatError("cascade file: stage blob at offset " + std::to_string(at) +
                              " claims " + std::to_string(blob_len) + " bytes, only " +
                              std::to_string(r.remaining()) + " remain");
        }
        *stage = model_from_bytes(data + r.pos, blob_len);
        r.pos += blob_len;
    }
    if (r.remaining() != 0) {
        throw FormatError("cascade file: " + std::to_string(r.remaining()) +
                          " trailing bytes at offset " + std::to_string(r.pos));
    }
    validate_cascade(model);
    return model;
}

void cascade_save(const CascadeModel& model, const std::string& path) {
    byteio::write_file(path, cascade_to_bytes(model));
}

CascadeModel cascade_load(const std::string& path) {
    const std::vector<uint8_t> bytes = byteio::read_file(path);
    return cascade_from_bytes(bytes.data(), bytes.size());
}

}  // namespace bsc
