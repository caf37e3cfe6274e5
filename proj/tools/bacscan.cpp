// bacscan: command-line front door for the sputum-smear patch detector.
// Subcommands: synth, train, eval, detect, inspect-model.
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "bsc/byteio.hpp"
#include "bsc/cascade.hpp"
#include "bsc/corpus.hpp"
#include "bsc/detect.hpp"
#include "bsc/errors.hpp"
#include "bsc/image_io.hpp"
#include "bsc/pipeline.hpp"
#include "bsc/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void set_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw bsc::IoError("cannot write " + path.string());
    f << text;
    if (!text.empty() && text.back() != '\n') f << "\n";
    if (!f) throw bsc::IoError("write failed: " + path.string());
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw bsc::IoError("cannot create " + dir + ": " + ec.message());
}

json model_header_json(const bsc::NetworkModel& m) {
    json layers = json::array();
    int64_t params = 0;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const bsc::ConvLayerSpec& l = m.layers[i];
        layers.push_back({{"kh", l.kh},
                          {"kw", l.kw},
                          {"in_c", l.in_c},
                          {"out_c", l.out_c},
                          {"stride", l.stride},
                          {"relu", l.relu}});
        params += m.weights[i].size() + m.biases[i].size();
    }
    return {{"format", "BSCN"},
            {"version", bsc::kModelFormatVersion},
            {"layers", layers},
            {"norm_tag", m.norm_tag},
            {"seed", m.rng_seed},
            {"parameters", params}};
}

struct CommonFlags {
    std::string config_path;
    uint64_t seed = 0;
    int threads = 0;
};

bsc::RunConfig resolve_config(const CommonFlags& common, const CLI::Option* seed_opt) {
    bsc::RunConfig cfg;
    if (!common.config_path.empty()) cfg = bsc::load_run_config(common.config_path);
    if (seed_opt != nullptr && seed_opt->count() > 0) cfg.seed = common.seed;
    return cfg;
}

int cmd_synth(const CommonFlags& common, const bsc::RunConfig& cfg_in,
              const std::string& out_dir, const std::string& format) {
    set_threads(common.threads);
    bsc::RunConfig cfg = cfg_in;
    cfg.synth.seed = cfg.seed;
    bsc::validate_run_config(cfg);

    const bsc::Corpus corpus = bsc::generate_corpus(cfg.synth);
    bsc::save_corpus_dir(corpus, out_dir, format);
    write_text(fs::path(out_dir) / "effective_config.json", bsc::run_config_to_json(cfg));

    const bsc::CorpusStats st = bsc::corpus_stats(corpus, cfg.label);
    std::cout << "wrote corpus to " << out_dir << "\n"
              << "slides: " << st.slides << ", view-fields: " << st.viewfields
              << ", annotations: " << st.annotations << "\n"
              << "stride-20 tiling: " << st.positive_patches << " positive / "
              << st.negative_patches << " negative patches\n";
    return 0;
}

int cmd_train(const CommonFlags& common, const bsc::RunConfig& cfg,
              const std::string& corpus_dir, const std::string& out_dir) {
    set_threads(common.threads);
    bsc::validate_run_config(cfg);
    ensure_dir(out_dir);

    const bsc::Corpus corpus = bsc::load_corpus_dir(corpus_dir);
    const bsc::TrainOutcome outcome = bsc::run_train(corpus, cfg);

    const fs::path model_path = fs::path(out_dir) / "cascade.bcsc";
    bsc::cascade_save(outcome.cascade, model_path.string());

    json log;
    log["stage1_epoch_loss"] = outcome.stage1_trace.epoch_mean_loss;
    log["stage2_epoch_loss"] = outcome.stage2_trace.epoch_mean_loss;
    log["harvest"] = {{"true_positives", outcome.harvest_tp},
                      {"false_positives", outcome.harvest_fp}};
    log["stage2_degenerate"] = outcome.stage2_degenerate;
    log["balanced_train_samples"] = outcome.balanced_train_size;
    log["train_tiling_samples"] = outcome.train_tiling_size;
    log["effective_config"] = json::parse(bsc::run_config_to_json(cfg));
    write_text(fs::path(out_dir) / "train_log.json", log.dump(2));
    write_text(fs::path(out_dir) / "effective_config.json", bsc::run_config_to_json(cfg));

    std::cout << "balanced train samples: " << outcome.balanced_train_size << "\n";
    if (cfg.stage2_enabled) {
        std::cout << "harvest: " << outcome.harvest_tp << " TP / " << outcome.harvest_fp
                  << " FP over " << outcome.train_tiling_size << " train windows\n";
        if (outcome.stage2_degenerate)
            std::cout << "warning: single-label harvest; stage 2 is pass-through\n";
    } else {
        std::cout << "stage 2 disabled; wrote pass-through second stage\n";
    }
    std::cout << "wrote " << model_path.string() << "\n";
    return 0;
}

int cmd_eval(const CommonFlags& common, bsc::RunConfig cfg,
             const std::string& corpus_dir, const std::string& model_path,
             const std::string& out_dir, CLI::Option* stride_opt, int stride_flag,
             bool overlays, bool records, const std::string& stage2_mode) {
    set_threads(common.threads);
    if (stride_opt->count() > 0) cfg.stride = stride_flag;
    cfg.stage2_enabled = stage2_mode != "off";
    bsc::validate_run_config(cfg);
    ensure_dir(out_dir);

    const bsc::Corpus corpus = bsc::load_corpus_dir(corpus_dir);
    bsc::CascadeModel model = bsc::cascade_load(model_path);
    if (!cfg.stage2_enabled) model.stage2 = bsc::make_passthrough_model();

    const bool keep_records = records || overlays;
    bsc::DetectionReport report = bsc::run_eval(corpus, model, cfg, keep_records);

    if (overlays) {
        const bsc::SplitAssignment split = bsc::split_corpus(corpus, cfg.fractions);
        const std::vector<std::string> files = bsc::write_eval_overlays(
            corpus, split, report, (fs::path(out_dir) / "overlays").string());
        std::cout << "wrote " << files.size() << " overlay images\n";
    }
    if (!records) report.windows.clear();
    write_text(fs::path(out_dir) / "report.json", bsc::report_to_json(report));
    write_text(fs::path(out_dir) / "effective_config.json", bsc::run_config_to_json(cfg));

    for (const std::string& w : report.warnings) std::cout << "warning: " << w << "\n";
    auto show = [](const std::optional<double>& v) {
        return v.has_value() ? std::to_string(*v) : std::string("undefined");
    };
    std::cout << "tp=" << report.counts.tp << " fp=" << report.counts.fp
              << " tn=" << report.counts.tn << " fn=" << report.counts.fn << "\n"
              << "recall=" << show(report.metrics.recall)
              << " precision=" << show(report.metrics.precision)
              << " accuracy=" << show(report.metrics.accuracy) << "\n"
              << "wrote " << (fs::path(out_dir) / "report.json").string() << "\n";
    return 0;
}

int cmd_detect(const CommonFlags& common, const std::string& image_path,
               const std::string& model_path, const std::string& out_path,
               int stride, const std::string& records_path) {
    set_threads(common.threads);
    bsc::ViewField vf;
    vf.slide_id = fs::path(image_path).stem().string();
    vf.index = 0;
    vf.image = bsc::read_image(image_path);

    const bsc::CascadeModel model = bsc::cascade_load(model_path);
    const std::vector<bsc::StageTrace> traces = bsc::detect_viewfield(vf, model, stride);

    std::vector<bsc::WindowRecord> recs;
    recs.reserve(traces.size());
    int64_t accepted = 0;
    json decisions = json::array();
    for (const bsc::StageTrace& tr : traces) {
        recs.push_back({tr, -1});
        if (!tr.accepted) continue;
        ++accepted;
        decisions.push_back({{"top", tr.origin.top},
                             {"left", tr.origin.left},
                             {"p1", tr.p1},
                             {"p2", tr.p2.has_value() ? json(*tr.p2) : json(nullptr)}});
    }
    if (!out_path.empty()) bsc::render_overlay(vf, recs, out_path);
    if (!records_path.empty()) {
        json rows = json::array();
        for (const bsc::WindowRecord& w : recs) {
            rows.push_back({{"top", w.trace.origin.top},
                            {"left", w.trace.origin.left},
                            {"p1", w.trace.p1},
                            {"stage1_fired", w.trace.stage1_fired},
                            {"p2", w.trace.p2.has_value() ? json(*w.trace.p2) : json(nullptr)},
                            {"accepted", w.trace.accepted}});
        }
        write_text(records_path, rows.dump(2));
    }

    json out = {{"image", image_path},
                {"windows", traces.size()},
                {"accepted", accepted},
                {"stride", stride},
                {"decisions", decisions}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_inspect(const std::string& model_path) {
    const std::vector<uint8_t> bytes = bsc::byteio::read_file(model_path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "BSCN", 4) == 0) {
        const bsc::NetworkModel m = bsc::model_from_bytes(bytes.data(), bytes.size());
        std::cout << model_header_json(m).dump(2) << "\n";
        return 0;
    }
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "BCSC", 4) == 0) {
        const bsc::CascadeModel m = bsc::cascade_from_bytes(bytes.data(), bytes.size());
        const json j = {{"format", "BCSC"},
                        {"version", bsc::kCascadeFormatVersion},
                        {"threshold1", m.threshold1},
                        {"threshold2", m.threshold2},
                        {"stage1", model_header_json(m.stage1)},
                        {"stage2", model_header_json(m.stage2)}};
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    throw bsc::FormatError(model_path + ": bad magic at offset 0 (expected \"BSCN\" or \"BCSC\")");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchwise bacillus detector for sputum-smear view-fields"};
    app.require_subcommand(1);

    CommonFlags common;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic annotated corpus");
    std::string synth_out;
    std::string synth_format = "ppm";
    int synth_slides = 0, synth_fields = 0, synth_field_h = 0, synth_field_w = 0;
    int synth_bmin = 0, synth_bmax = 0;
    double synth_overlap = 0.0, synth_noise = 0.0;
    synth->add_option("--out", synth_out, "output corpus directory")->required();
    synth->add_option("--config", common.config_path, "JSON run config");
    CLI::Option* synth_seed = synth->add_option("--seed", common.seed, "root seed");
    auto* o_slides = synth->add_option("--slides", synth_slides, "slide count");
    auto* o_fields = synth->add_option("--fields", synth_fields, "view-fields per slide");
    auto* o_fh = synth->add_option("--field-h", synth_field_h, "view-field height px");
    auto* o_fw = synth->add_option("--field-w", synth_field_w, "view-field width px");
    auto* o_overlap = synth->add_option("--overlap", synth_overlap,
                                        "overlap fraction between consecutive fields");
    auto* o_bmin = synth->add_option("--bacilli-min", synth_bmin, "min rod events per field");
    auto* o_bmax = synth->add_option("--bacilli-max", synth_bmax, "max rod events per field");
    auto* o_noise = synth->add_option("--noise", synth_noise, "Gaussian noise sigma");
    synth->add_option("--format", synth_format, "image format: ppm or png")
        ->check(CLI::IsMember({"ppm", "png"}));
    synth->add_option("--threads", common.threads, "cap worker threads");

    // train
    auto* train = app.add_subcommand("train", "train the two-stage cascade on a corpus");
    std::string train_corpus, train_out;
    std::string train_stage2 = "on";
    float train_lr = 0.0f;
    int train_epochs = 0, train_batch = 0;
    train->add_option("--corpus", train_corpus, "corpus directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--config", common.config_path, "JSON run config");
    CLI::Option* train_seed = train->add_option("--seed", common.seed, "root seed");
    auto* o_lr = train->add_option("--lr", train_lr, "learning rate");
    auto* o_epochs = train->add_option("--epochs", train_epochs, "training epochs");
    auto* o_batch = train->add_option("--batch", train_batch, "minibatch size");
    train->add_option("--stage2", train_stage2, "train the second stage (on|off)")
        ->check(CLI::IsMember({"on", "off"}));
    train->add_option("--threads", common.threads, "cap worker threads");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a cascade on the test partition");
    std::string eval_corpus, eval_model, eval_out;
    std::string eval_stage2 = "on";
    int eval_stride = 0;
    bool eval_overlays = false, eval_records = false;
    eval->add_option("--corpus", eval_corpus, "corpus directory")->required();
    eval->add_option("--model", eval_model, "cascade model file")->required();
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--config", common.config_path, "JSON run config");
    auto* o_stride = eval->add_option("--stride", eval_stride, "window stride px");
    eval->add_flag("--overlays", eval_overlays, "write per-field overlay images");
    eval->add_flag("--records", eval_records, "include per-window records in the report");
    eval->add_option("--stage2", eval_stage2,
                     "use the trained second stage or a pass-through (on|off)")
        ->check(CLI::IsMember({"on", "off"}));
    eval->add_option("--threads", common.threads, "cap worker threads");

    // detect
    auto* detect = app.add_subcommand("detect", "run the cascade over one image");
    std::string detect_image, detect_model, detect_out, detect_records;
    int detect_stride = 20;
    detect->add_option("--image", detect_image, "input image (ppm or png)")->required();
    detect->add_option("--model", detect_model, "cascade model file")->required();
    detect->add_option("--out", detect_out, "overlay output image path");
    detect->add_option("--stride", detect_stride, "window stride px");
    detect->add_option("--records", detect_records, "write per-window records JSON here");
    detect->add_option("--threads", common.threads, "cap worker threads");

    // inspect-model
    auto* inspect = app.add_subcommand("inspect-model", "print a model file header");
    std::string inspect_model;
    inspect->add_option("--model", inspect_model, "model or cascade file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            bsc::RunConfig cfg = resolve_config(common, synth_seed);
            if (o_slides->count() > 0) cfg.synth.slides = synth_slides;
            if (o_fields->count() > 0) cfg.synth.viewfields_per_slide = synth_fields;
            if (o_fh->count() > 0) cfg.synth.field_h = synth_field_h;
            if (o_fw->count() > 0) cfg.synth.field_w = synth_field_w;
            if (o_overlap->count() > 0) cfg.synth.overlap_fraction = synth_overlap;
            if (o_bmin->count() > 0) cfg.synth.bacilli_min = synth_bmin;
            if (o_bmax->count() > 0) cfg.synth.bacilli_max = synth_bmax;
            if (o_noise->count() > 0) cfg.synth.noise_sigma = synth_noise;
            return cmd_synth(common, cfg, synth_out, synth_format);
        }
        if (train->parsed()) {
            bsc::RunConfig cfg = resolve_config(common, train_seed);
            if (o_lr->count() > 0) cfg.train.learning_rate = train_lr;
            if (o_epochs->count() > 0) cfg.train.epochs = train_epochs;
            if (o_batch->count() > 0) cfg.train.batch_size = train_batch;
            cfg.stage2_enabled = train_stage2 != "off";
            return cmd_train(common, cfg, train_corpus, train_out);
        }
        if (eval->parsed()) {
            const bsc::RunConfig cfg = resolve_config(common, nullptr);
            return cmd_eval(common, cfg, eval_corpus, eval_model, eval_out, o_stride,
                            eval_stride, eval_overlays, eval_records, eval_stage2);
        }
        if (detect->parsed()) {
            return cmd_detect(common, detect_image, detect_model, detect_out,
                              detect_stride, detect_records);
        }
        if (inspect->parsed()) return cmd_inspect(inspect_model);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;  // unreachable with require_subcommand(1)
}
