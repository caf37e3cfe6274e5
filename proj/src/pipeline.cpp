#include "bsc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "bsc/errors.hpp"
#include "bsc/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace bsc {

void validate_run_config(const RunConfig& cfg) {
    const SplitFractions& f = cfg.fractions;
    if (f.train < 0 || f.unused < 0 || f.test < 0 ||
        std::fabs(f.train + f.unused + f.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be non-negative and sum to 1");
    }
    if (!(cfg.threshold1 > 0.0f && cfg.threshold1 < 1.0f) ||
        !(cfg.threshold2 > 0.0f && cfg.threshold2 < 1.0f)) {
        throw ConfigError("decision thresholds must lie in (0,1)");
    }
    if (cfg.stride < 1) throw ConfigError("stride must be >= 1");
    if (!(cfg.label.min_overlap > 0.0f && cfg.label.min_overlap <= 1.0f)) {
        throw ConfigError("label min_overlap must lie in (0,1]");
    }
    if (cfg.train.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.train.learning_rate >= 0.0f) ||
        !std::isfinite(cfg.train.learning_rate)) {
        throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (!(cfg.train.weight_init_scale > 0.0f)) {
        throw ConfigError("weight_init_scale must be > 0");
    }
    validate_synth_config(cfg.synth);
}

// ---------------------------------------------------------------------------
// JSON config

namespace {

using nlohmann::json;

void require_known_keys(const json& obj, const std::vector<std::string>& known,
                        const std::string& where) {
    for (const auto& item : obj.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ConfigError("config: unknown key \"" + where + item.key() + "\"");
        }
    }
}

const json& member(const json& obj, const char* key) { return obj.at(key); }

double num_or(const json& obj, const char* key, double fallback,
              const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = member(obj, key);
    if (!v.is_number()) {
        throw ConfigError("config: \"" + where + key + "\" must be a number");
    }
    return v.get<double>();
}

int int_or(const json& obj, const char* key, int fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = member(obj, key);
    if (!v.is_number_integer()) {
        throw ConfigError("config: \"" + where + key + "\" must be an integer");
    }
    return v.get<int>();
}

uint64_t u64_or(const json& obj, const char* key, uint64_t fallback,
                const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = member(obj, key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0))) {
        throw ConfigError("config: \"" + where + key +
                          "\" must be a non-negative integer");
    }
    return v.get<uint64_t>();
}

bool bool_or(const json& obj, const char* key, bool fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = member(obj, key);
    if (!v.is_boolean()) {
        throw ConfigError("config: \"" + where + key + "\" must be true or false");
    }
    return v.get<bool>();
}

json color_range_json(const ColorRange& c) {
    return json::array({c.r_lo, c.r_hi, c.g_lo, c.g_hi, c.b_lo, c.b_hi});
}

ColorRange color_range_or(const json& obj, const char* key, ColorRange fallback,
                          const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = member(obj, key);
    if (!v.is_array() || v.size() != 6) {
        throw ConfigError("config: \"" + where + key +
                          "\" must be an array of 6 numbers "
                          "[r_lo,r_hi,g_lo,g_hi,b_lo,b_hi]");
    }
    float vals[6];
    for (size_t i = 0; i < 6; ++i) {
        if (!v[i].is_number()) {
            throw ConfigError("config: \"" + where + key + "\" entries must be numbers");
        }
        vals[i] = v[i].get<float>();
    }
    return ColorRange{vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]};
}

json architecture_json() {
    json arr = json::array();
    for (const ConvLayerSpec& l : default_patch_layers()) {
        arr.push_back({{"kh", l.kh},
                       {"kw", l.kw},
                       {"in_c", l.in_c},
                       {"out_c", l.out_c},
                       {"stride", l.stride},
                       {"relu", l.relu}});
    }
    return arr;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["split"] = {{"train", cfg.fractions.train},
                  {"unused", cfg.fractions.unused},
                  {"test", cfg.fractions.test}};
    j["label"] = {{"min_overlap", cfg.label.min_overlap}};
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"weight_init_scale", cfg.train.weight_init_scale}};
    j["thresholds"] = {{"stage1", cfg.threshold1}, {"stage2", cfg.threshold2}};
    j["stride"] = cfg.stride;
    j["stage2"] = cfg.stage2_enabled;
    j["synth"] = {{"slides", cfg.synth.slides},
                  {"viewfields_per_slide", cfg.synth.viewfields_per_slide},
                  {"field_h", cfg.synth.field_h},
                  {"field_w", cfg.synth.field_w},
                  {"overlap_fraction", cfg.synth.overlap_fraction},
                  {"bacilli_min", cfg.synth.bacilli_min},
                  {"bacilli_max", cfg.synth.bacilli_max},
                  {"length_min", cfg.synth.length_min},
                  {"length_max", cfg.synth.length_max},
                  {"width_min", cfg.synth.width_min},
                  {"width_max", cfg.synth.width_max},
                  {"cluster_prob", cfg.synth.cluster_prob},
                  {"cluster_min", cfg.synth.cluster_min},
                  {"cluster_max", cfg.synth.cluster_max},
                  {"foreground", color_range_json(cfg.synth.foreground)},
                  {"background", color_range_json(cfg.synth.background)},
                  {"noise_sigma", cfg.synth.noise_sigma}};
    // Fixed by the library, echoed so a config file pins the full recipe.
    j["architecture"] = architecture_json();
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const RunConfig& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    require_known_keys(j,
                       {"seed", "split", "label", "train", "thresholds", "stride",
                        "stage2", "synth", "architecture"},
                       "");

    RunConfig cfg = base;
    cfg.seed = u64_or(j, "seed", cfg.seed, "");
    if (j.contains("split")) {
        const json& s = j["split"];
        require_known_keys(s, {"train", "unused", "test"}, "split.");
        cfg.fractions.train = num_or(s, "train", cfg.fractions.train, "split.");
        cfg.fractions.unused = num_or(s, "unused", cfg.fractions.unused, "split.");
        cfg.fractions.test = num_or(s, "test", cfg.fractions.test, "split.");
    }
    if (j.contains("label")) {
        const json& s = j["label"];
        require_known_keys(s, {"min_overlap"}, "label.");
        cfg.label.min_overlap =
            static_cast<float>(num_or(s, "min_overlap", cfg.label.min_overlap, "label."));
    }
    if (j.contains("train")) {
        const json& s = j["train"];
        require_known_keys(s, {"learning_rate", "epochs", "batch_size", "weight_init_scale"},
                           "train.");
        cfg.train.learning_rate = static_cast<float>(
            num_or(s, "learning_rate", cfg.train.learning_rate, "train."));
        cfg.train.epochs = int_or(s, "epochs", cfg.train.epochs, "train.");
        cfg.train.batch_size = int_or(s, "batch_size", cfg.train.batch_size, "train.");
        cfg.train.weight_init_scale = static_cast<float>(
            num_or(s, "weight_init_scale", cfg.train.weight_init_scale, "train."));
    }
    if (j.contains("thresholds")) {
        const json& s = j["thresholds"];
        require_known_keys(s, {"stage1", "stage2"}, "thresholds.");
        cfg.threshold1 = static_cast<float>(num_or(s, "stage1", cfg.threshold1, "thresholds."));
        cfg.threshold2 = static_cast<float>(num_or(s, "stage2", cfg.threshold2, "thresholds."));
    }
    cfg.stride = int_or(j, "stride", cfg.stride, "");
    cfg.stage2_enabled = bool_or(j, "stage2", cfg.stage2_enabled, "");
    if (j.contains("synth")) {
        const json& s = j["synth"];
        require_known_keys(s,
                           {"slides", "viewfields_per_slide", "field_h", "field_w",
                            "overlap_fraction", "bacilli_min", "bacilli_max",
                            "length_min", "length_max", "width_min", "width_max",
                            "cluster_prob", "cluster_min", "cluster_max", "foreground",
                            "background", "noise_sigma"},
                           "synth.");
        SynthConfig& sc = cfg.synth;
        sc.slides = int_or(s, "slides", sc.slides, "synth.");
        sc.viewfields_per_slide =
            int_or(s, "viewfields_per_slide", sc.viewfields_per_slide, "synth.");
        sc.field_h = int_or(s, "field_h", sc.field_h, "synth.");
        sc.field_w = int_or(s, "field_w", sc.field_w, "synth.");
        sc.overlap_fraction = num_or(s, "overlap_fraction", sc.overlap_fraction, "synth.");
        sc.bacilli_min = int_or(s, "bacilli_min", sc.bacilli_min, "synth.");
        sc.bacilli_max = int_or(s, "bacilli_max", sc.bacilli_max, "synth.");
        sc.length_min = int_or(s, "length_min", sc.length_min, "synth.");
        sc.length_max = int_or(s, "length_max", sc.length_max, "synth.");
        sc.width_min = int_or(s, "width_min", sc.width_min, "synth.");
        sc.width_max = int_or(s, "width_max", sc.width_max, "synth.");
        sc.cluster_prob = num_or(s, "cluster_prob", sc.cluster_prob, "synth.");
        sc.cluster_min = int_or(s, "cluster_min", sc.cluster_min, "synth.");
        sc.cluster_max = int_or(s, "cluster_max", sc.cluster_max, "synth.");
        sc.foreground = color_range_or(s, "foreground", sc.foreground, "synth.");
        sc.background = color_range_or(s, "background", sc.background, "synth.");
        sc.noise_sigma = num_or(s, "noise_sigma", sc.noise_sigma, "synth.");
    }
    if (j.contains("architecture") && j["architecture"] != architecture_json()) {
        throw ConfigError("config: the network architecture is fixed; remove the "
                          "\"architecture\" key or restore the stock layer list");
    }
    validate_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    try {
        return run_config_from_json(text, base);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Orchestration

TrainOutcome run_train(const Corpus& corpus, const RunConfig& cfg) {
    validate_run_config(cfg);
    const SplitAssignment split = split_corpus(corpus, cfg.fractions);
    PatchDataset ds = build_patch_dataset(corpus, split, /*balanced=*/true, cfg.seed,
                                          cfg.label);

    TrainOutcome out;
    out.balanced_train_size = static_cast<int64_t>(ds.train.size());
    out.cascade.threshold1 = cfg.threshold1;
    out.cascade.threshold2 = cfg.threshold2;

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;  // stage trainers derive their own named sub-seeds
    out.cascade.stage1 = train_stage1(ds.train, tc, &out.stage1_trace);

    if (cfg.stage2_enabled) {
        const std::vector<PatchSample> tiling =
            enumerate_tiling(corpus, split, Partition::Train, cfg.label);
        out.train_tiling_size = static_cast<int64_t>(tiling.size());
        const HarvestResult harvest =
            harvest_stage2_set(out.cascade.stage1, tiling, cfg.threshold1);
        out.harvest_tp = harvest.true_positives;
        out.harvest_fp = harvest.false_positives;
        out.cascade.stage2 =
            train_stage2(harvest, tc, &out.stage2_trace, &out.stage2_degenerate);
    } else {
        out.cascade.stage2 = make_passthrough_model();
    }
    validate_cascade(out.cascade);
    return out;
}

DetectionReport run_eval(const Corpus& corpus, const CascadeModel& model,
                         const RunConfig& cfg, bool keep_records) {
    validate_run_config(cfg);
    const SplitAssignment split = split_corpus(corpus, cfg.fractions);
    return evaluate(corpus, split, model, cfg.stride, cfg.label, keep_records);
}

std::vector<std::string> write_eval_overlays(const Corpus& corpus,
                                             const SplitAssignment& split,
                                             const DetectionReport& report,
                                             const std::string& out_dir,
                                             const std::string& image_ext) {
    if (report.windows.empty() && report.counts.total() > 0) {
        throw ConfigError("overlays need per-window records; evaluate with records kept");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::map<std::pair<std::string, int>, std::vector<WindowRecord>> by_field;
    for (const WindowRecord& w : report.windows) {
        by_field[{w.trace.origin.slide_id, w.trace.origin.viewfield}].push_back(w);
    }

    std::vector<std::string> written;
    for (const Slide& s : corpus.slides) {
        const IndexRange r = split.for_slide(s.id).test;
        for (int i = r.begin; i < r.end; ++i) {
            const ViewField& vf = s.fields.at(static_cast<size_t>(i));
            const auto it = by_field.find({s.id, i});
            static const std::vector<WindowRecord> kNone;
            const std::vector<WindowRecord>& recs = it == by_field.end() ? kNone : it->second;
            const fs::path p = fs::path(out_dir) /
                               (s.id + "_" + std::to_string(i) + "." + image_ext);
            render_overlay(vf, recs, p.string());
            written.push_back(p.string());
        }
    }
    return written;
}

}  // namespace bsc
