#include "bsc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "bsc/byteio.hpp"
#include "bsc/errors.hpp"
#include "bsc/image_io.hpp"
#include "bsc/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace bsc {

const char* const kAnnotationsCsvHeader =
    "slide_id,viewfield_index,x_min,y_min,x_max,y_max";

const Slide& Corpus::slide(const std::string& id) const {
    for (const Slide& s : slides)
        if (s.id == id) return s;
    throw DataError("corpus has no slide \"" + id + "\"");
}

std::vector<BBox> Corpus::bboxes_for(const std::string& slide_id, int viewfield) const {
    std::vector<BBox> out;
    for (const Annotation& a : annotations)
        if (a.viewfield == viewfield && a.slide_id == slide_id) out.push_back(a.bbox);
    return out;
}

void validate_bbox(const BBox& box, int image_h, int image_w) {
    if (box.x_min < 0 || box.y_min < 0 || box.x_min >= box.x_max ||
        box.y_min >= box.y_max || box.x_max > image_w || box.y_max > image_h) {
        throw DataError("annotation bbox (" + std::to_string(box.x_min) + "," +
                        std::to_string(box.y_min) + ")-(" + std::to_string(box.x_max) +
                        "," + std::to_string(box.y_max) + ") invalid for " +
                        std::to_string(image_h) + "x" + std::to_string(image_w) +
                        " image");
    }
}

// ---------------------------------------------------------------------------
// Split

namespace {

void check_fractions(const SplitFractions& f) {
    if (f.train < 0 || f.unused < 0 || f.test < 0 ||
        std::fabs(f.train + f.unused + f.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be non-negative and sum to 1");
    }
}

}  // namespace

SlideSplit split_slide(int n_viewfields, const SplitFractions& fractions) {
    check_fractions(fractions);
    if (n_viewfields <= 0) throw DataError("split_slide: slide has no view-fields");
    const int n = n_viewfields;

    // The 1e-9 nudges counter double rounding: 0.6*5 evaluates slightly above
    // 3, and a raw ceil would hand train a fourth field.
    int train_n = static_cast<int>(std::ceil(fractions.train * n - 1e-9));
    int test_n = static_cast<int>(std::floor(fractions.test * n + 1e-9));
    train_n = std::clamp(train_n, 0, n);
    test_n = std::clamp(test_n, 0, n - train_n);

    SlideSplit sp;
    sp.train = {0, train_n};
    sp.unused = {train_n, n - test_n};
    sp.test = {n - test_n, n};
    sp.degenerate = sp.train.empty() || sp.test.empty();
    return sp;
}

SplitAssignment split_corpus(const Corpus& corpus, const SplitFractions& fractions) {
    SplitAssignment out;
    for (const Slide& s : corpus.slides) {
        out.slides.emplace_back(s.id, split_slide(static_cast<int>(s.fields.size()),
                                                  fractions));
    }
    return out;
}

const SlideSplit& SplitAssignment::for_slide(const std::string& id) const {
    for (const auto& [sid, sp] : slides)
        if (sid == id) return sp;
    throw DataError("split assignment has no slide \"" + id + "\"");
}

// ---------------------------------------------------------------------------
// Labeling

int label_patch(int top, int left, const std::vector<BBox>& boxes,
                const LabelConfig& cfg) {
    constexpr int64_t patch_area = static_cast<int64_t>(kPatchSize) * kPatchSize;
    for (const BBox& b : boxes) {
        const int ix0 = std::max(left, b.x_min);
        const int iy0 = std::max(top, b.y_min);
        const int ix1 = std::min(left + kPatchSize, b.x_max);
        const int iy1 = std::min(top + kPatchSize, b.y_max);
        if (ix0 >= ix1 || iy0 >= iy1) continue;
        const int64_t inter = static_cast<int64_t>(ix1 - ix0) * (iy1 - iy0);
        const int64_t denom = std::min(patch_area, b.area());
        if (static_cast<double>(inter) / static_cast<double>(denom) >=
            static_cast<double>(cfg.min_overlap)) {
            return 1;
        }
    }
    return 0;
}

namespace {

void check_field_size(const ViewField& vf) {
    if (vf.image.rank() != 3 || vf.image.dim(2) != kPatchChannels) {
        throw ShapeError("view-field image must be [H,W,3], got " +
                         vf.image.shape_string());
    }
    if (vf.image.dim(0) < kPatchSize || vf.image.dim(1) < kPatchSize) {
        throw DataError("view-field " + vf.slide_id + "/" + std::to_string(vf.index) +
                        " is smaller than a " + std::to_string(kPatchSize) + "x" +
                        std::to_string(kPatchSize) + " patch");
    }
}

PatchSample make_sample(const ViewField& vf, int top, int left, int label) {
    PatchSample s;
    s.pixels = vf.image.slice_patch(top, left, kPatchSize, kPatchSize);
    s.label = label;
    s.origin = {vf.slide_id, vf.index, top, left};
    return s;
}

}  // namespace

std::vector<PatchSample> extract_positive_patches(const ViewField& vf,
                                                  const std::vector<BBox>& boxes,
                                                  const LabelConfig& cfg) {
    check_field_size(vf);
    const int h = vf.image.dim(0);
    const int w = vf.image.dim(1);
    for (const BBox& b : boxes) validate_bbox(b, h, w);

    std::vector<PatchSample> out;
    std::set<std::pair<int, int>> seen;
    auto emit = [&](int top, int left) {
        top = std::clamp(top, 0, h - kPatchSize);
        left = std::clamp(left, 0, w - kPatchSize);
        if (!seen.insert({top, left}).second) return;
        if (label_patch(top, left, boxes, cfg) != 1) return;
        out.push_back(make_sample(vf, top, left, 1));
    };

    for (const BBox& b : boxes) {
        emit((b.y_min + b.y_max) / 2 - kPatchSize / 2,
             (b.x_min + b.x_max) / 2 - kPatchSize / 2);
        if (b.height() > kPatchSize || b.width() > kPatchSize) {
            // Large boxes also contribute the detector-grid windows they
            // touch, so training sees the same offsets the tiling will.
            for (int ty = 0; ty + kPatchSize <= h; ty += kPatchSize)
                for (int tx = 0; tx + kPatchSize <= w; tx += kPatchSize) {
                    const int iy = std::min(ty + kPatchSize, b.y_max) - std::max(ty, b.y_min);
                    const int ix = std::min(tx + kPatchSize, b.x_max) - std::max(tx, b.x_min);
                    if (iy > 0 && ix > 0) emit(ty, tx);
                }
        }
    }
    return out;
}

std::vector<PatchSample> sample_negatives(const ViewField& vf,
                                          const std::vector<BBox>& boxes, int k,
                                          uint64_t seed, const LabelConfig& cfg) {
    if (k < 0) throw ConfigError("sample_negatives: k must be non-negative");
    check_field_size(vf);
    const int h = vf.image.dim(0);
    const int w = vf.image.dim(1);
    for (const BBox& b : boxes) validate_bbox(b, h, w);

    std::vector<std::pair<int, int>> cand;
    for (int top = 0; top <= h - kPatchSize; ++top)
        for (int left = 0; left <= w - kPatchSize; ++left)
            if (label_patch(top, left, boxes, cfg) == 0) cand.emplace_back(top, left);

    if (cand.size() < static_cast<size_t>(k)) {
        throw DataError("view-field " + vf.slide_id + "/" + std::to_string(vf.index) +
                        ": insufficient negative windows: need " + std::to_string(k) +
                        ", have " + std::to_string(cand.size()));
    }
    Rng rng(seed);
    std::vector<PatchSample> out;
    out.reserve(static_cast<size_t>(k));
    // Partial Fisher-Yates: k draws without replacement.
    for (int i = 0; i < k; ++i) {
        const size_t j = static_cast<size_t>(i) + rng.bounded(cand.size() - i);
        std::swap(cand[static_cast<size_t>(i)], cand[j]);
        out.push_back(make_sample(vf, cand[static_cast<size_t>(i)].first,
                                  cand[static_cast<size_t>(i)].second, 0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

namespace {

const ViewField& field_at(const Slide& s, int index) {
    if (index < 0 || static_cast<size_t>(index) >= s.fields.size()) {
        throw DataError("split range index " + std::to_string(index) +
                        " exceeds slide \"" + s.id + "\" (" +
                        std::to_string(s.fields.size()) + " fields)");
    }
    return s.fields[static_cast<size_t>(index)];
}

}  // namespace

std::vector<PatchSample> enumerate_tiling(const Corpus& corpus,
                                          const SplitAssignment& split,
                                          Partition part, const LabelConfig& cfg) {
    std::vector<PatchSample> out;
    for (const Slide& s : corpus.slides) {
        const SlideSplit& sp = split.for_slide(s.id);
        const IndexRange r = (part == Partition::Train) ? sp.train : sp.test;
        for (int i = r.begin; i < r.end; ++i) {
            const ViewField& vf = field_at(s, i);
            check_field_size(vf);
            const std::vector<BBox> boxes = corpus.bboxes_for(s.id, i);
            const int h = vf.image.dim(0);
            const int w = vf.image.dim(1);
            for (int top = 0; top + kPatchSize <= h; top += kPatchSize)
                for (int left = 0; left + kPatchSize <= w; left += kPatchSize)
                    out.push_back(make_sample(vf, top, left,
                                              label_patch(top, left, boxes, cfg)));
        }
    }
    return out;
}

PatchDataset build_patch_dataset(const Corpus& corpus, const SplitAssignment& split,
                                 bool balanced, uint64_t seed,
                                 const LabelConfig& cfg) {
    int train_fields = 0;
    int test_fields = 0;
    for (const Slide& s : corpus.slides) {
        const SlideSplit& sp = split.for_slide(s.id);
        train_fields += sp.train.size();
        test_fields += sp.test.size();
    }
    if (train_fields == 0) throw DataError("empty train partition");
    if (test_fields == 0) throw DataError("empty test partition");

    PatchDataset ds;
    ds.test = enumerate_tiling(corpus, split, Partition::Test, cfg);
    if (!balanced) {
        ds.train = enumerate_tiling(corpus, split, Partition::Train, cfg);
        return ds;
    }

    size_t total_pos = 0;
    for (const Slide& s : corpus.slides) {
        const SlideSplit& sp = split.for_slide(s.id);

        std::vector<PatchSample> pos;
        // Pool negative candidates across the slide's train fields so the
        // per-slide draw is one seeded event regardless of field count.
        std::vector<std::tuple<int, int, int>> cand;  // (field, top, left)
        for (int i = sp.train.begin; i < sp.train.end; ++i) {
            const ViewField& vf = field_at(s, i);
            const std::vector<BBox> boxes = corpus.bboxes_for(s.id, i);
            std::vector<PatchSample> p = extract_positive_patches(vf, boxes, cfg);
            std::move(p.begin(), p.end(), std::back_inserter(pos));

            const int h = vf.image.dim(0);
            const int w = vf.image.dim(1);
            for (int top = 0; top <= h - kPatchSize; ++top)
                for (int left = 0; left <= w - kPatchSize; ++left)
                    if (label_patch(top, left, boxes, cfg) == 0)
                        cand.emplace_back(i, top, left);
        }

        const size_t k = pos.size();
        total_pos += k;
        if (cand.size() < k) {
            throw DataError("slide \"" + s.id + "\": insufficient negative windows: need " +
                            std::to_string(k) + ", have " + std::to_string(cand.size()));
        }
        Rng rng(derive_seed(seed, "negatives/" + s.id));
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + rng.bounded(cand.size() - i);
            std::swap(cand[i], cand[j]);
        }
        cand.resize(k);
        // Canonical order for the emitted negatives, independent of draw order.
        std::sort(cand.begin(), cand.end());

        std::move(pos.begin(), pos.end(), std::back_inserter(ds.train));
        for (const auto& [field, top, left] : cand)
            ds.train.push_back(make_sample(field_at(s, field), top, left, 0));
    }
    if (total_pos == 0) {
        throw DataError("train partition contains no positive patches; "
                        "cannot build a balanced dataset");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Corpus directory I/O

void save_corpus_dir(const Corpus& corpus, const std::string& dir,
                     const std::string& image_ext) {
    if (image_ext != "ppm" && image_ext != "png") {
        throw ConfigError("image format must be \"ppm\" or \"png\", got \"" +
                          image_ext + "\"");
    }
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create " + dir + "/images: " + ec.message());

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["slides"] = nlohmann::json::array();
    for (const Slide& s : corpus.slides) {
        manifest["slides"].push_back(
            {{"id", s.id}, {"viewfields", s.fields.size()}});
        for (const ViewField& vf : s.fields) {
            const fs::path p = fs::path(dir) / "images" /
                               (s.id + "_" + std::to_string(vf.index) + "." + image_ext);
            write_image(vf.image, p.string());
        }
    }
    {
        std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
        if (!f) throw IoError("cannot write " + dir + "/manifest.json");
        f << manifest.dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(dir) / "annotations.csv", std::ios::trunc);
        if (!f) throw IoError("cannot write " + dir + "/annotations.csv");
        f << kAnnotationsCsvHeader << "\n";
        for (const Annotation& a : corpus.annotations) {
            f << a.slide_id << "," << a.viewfield << "," << a.bbox.x_min << ","
              << a.bbox.y_min << "," << a.bbox.x_max << "," << a.bbox.y_max << "\n";
        }
        if (!f) throw IoError("write failed: " + dir + "/annotations.csv");
    }
}

namespace {

int parse_int_field(const std::string& text, const std::string& context) {
    try {
        size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw FormatError(context + ": expected an integer, got \"" + text + "\"");
    }
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Corpus load_corpus_dir(const std::string& dir) {
    nlohmann::json manifest;
    {
        std::ifstream f(fs::path(dir) / "manifest.json");
        if (!f) throw IoError("cannot open " + dir + "/manifest.json");
        try {
            f >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(dir + "/manifest.json: " + e.what());
        }
    }
    if (!manifest.is_object() || manifest.value("version", 0) != 1 ||
        !manifest.contains("slides") || !manifest["slides"].is_array()) {
        throw FormatError(dir + "/manifest.json: expected {\"version\":1,\"slides\":[...]}");
    }

    Corpus corpus;
    for (const nlohmann::json& entry : manifest["slides"]) {
        if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string() ||
            !entry.contains("viewfields") || !entry["viewfields"].is_number_integer()) {
            throw FormatError(dir + "/manifest.json: slide entries need a string "
                              "\"id\" and integer \"viewfields\"");
        }
        Slide s;
        s.id = entry["id"].get<std::string>();
        const int n = entry["viewfields"].get<int>();
        if (n < 0) throw FormatError(dir + "/manifest.json: negative viewfields count");
        for (int i = 0; i < n; ++i) {
            const fs::path base = fs::path(dir) / "images" /
                                  (s.id + "_" + std::to_string(i));
            fs::path img = base;
            img += ".ppm";
            if (!fs::exists(img)) {
                img = base;
                img += ".png";
            }
            if (!fs::exists(img)) {
                throw IoError("missing image for slide \"" + s.id + "\" field " +
                              std::to_string(i) + " (tried .ppm and .png under " +
                              dir + "/images)");
            }
            ViewField vf;
            vf.slide_id = s.id;
            vf.index = i;
            vf.image = read_image(img.string());
            s.fields.push_back(std::move(vf));
        }
        corpus.slides.push_back(std::move(s));
    }

    std::ifstream csv(fs::path(dir) / "annotations.csv");
    if (!csv) throw IoError("cannot open " + dir + "/annotations.csv");
    std::string line;
    int lineno = 0;
    while (std::getline(csv, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != kAnnotationsCsvHeader) {
                throw FormatError(dir + "/annotations.csv line 1: expected header \"" +
                                  std::string(kAnnotationsCsvHeader) + "\"");
            }
            continue;
        }
        if (line.empty()) continue;
        const std::string context = dir + "/annotations.csv line " + std::to_string(lineno);
        const std::vector<std::string> cols = split_csv_row(line);
        if (cols.size() != 6) {
            throw FormatError(context + ": expected 6 comma-separated fields, got " +
                              std::to_string(cols.size()));
        }
        Annotation a;
        a.slide_id = cols[0];
        a.viewfield = parse_int_field(cols[1], context);
        a.bbox = {parse_int_field(cols[2], context), parse_int_field(cols[3], context),
                  parse_int_field(cols[4], context), parse_int_field(cols[5], context)};

        const Slide& s = corpus.slide(a.slide_id);
        if (a.viewfield < 0 || static_cast<size_t>(a.viewfield) >= s.fields.size()) {
            throw DataError(context + ": viewfield index " + std::to_string(a.viewfield) +
                            " out of range for slide \"" + a.slide_id + "\"");
        }
        const Tensor& img = s.fields[static_cast<size_t>(a.viewfield)].image;
        validate_bbox(a.bbox, img.dim(0), img.dim(1));
        corpus.annotations.push_back(std::move(a));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Patch pack

namespace {

constexpr char kPackMagic[4] = {'B', 'P', 'A', 'T'};
constexpr size_t kPatchBytes =
    static_cast<size_t>(kPatchSize) * kPatchSize * kPatchChannels;

uint16_t to_u16_checked(int64_t v, const char* field) {
    if (v < 0 || v > 0xffff) {
        throw FormatError(std::string("patch pack: ") + field + " value " +
                          std::to_string(v) + " does not fit in u16");
    }
    return static_cast<uint16_t>(v);
}

}  // namespace

std::vector<uint8_t> patch_pack_to_bytes(const std::vector<PatchSample>& samples) {
    using namespace byteio;
    if (samples.size() > 0xffffffffull) throw FormatError("patch pack: too many samples");
    std::vector<uint8_t> out;
    out.insert(out.end(), kPackMagic, kPackMagic + 4);
    put_u32(out, static_cast<uint32_t>(samples.size()));
    for (const PatchSample& s : samples) {
        if (s.label != 0 && s.label != 1) {
            throw DataError("patch pack: label must be 0 or 1, got " +
                            std::to_string(s.label));
        }
        if (s.pixels.rank() != 3 || s.pixels.dim(0) != kPatchSize ||
            s.pixels.dim(1) != kPatchSize || s.pixels.dim(2) != kPatchChannels) {
            throw ShapeError("patch pack: pixels must be [20,20,3], got " +
                             s.pixels.shape_string());
        }
        put_u8(out, static_cast<uint8_t>(s.label));
        put_u16(out, to_u16_checked(static_cast<int64_t>(s.origin.slide_id.size()),
                                    "slide id length"));
        out.insert(out.end(), s.origin.slide_id.begin(), s.origin.slide_id.end());
        put_u16(out, to_u16_checked(s.origin.viewfield, "viewfield"));
        put_u16(out, to_u16_checked(s.origin.top, "top"));
        put_u16(out, to_u16_checked(s.origin.left, "left"));
        for (int64_t j = 0; j < s.pixels.size(); ++j) {
            const float v = s.pixels[j];
            const long b = std::lround(v);
            if (b < 0 || b > 255) {
                throw DataError("patch pack: pixel value " + std::to_string(v) +
                                " outside byte range");
            }
            put_u8(out, static_cast<uint8_t>(b));
        }
    }
    return out;
}

std::vector<PatchSample> patch_pack_from_bytes(const uint8_t* data, size_t len) {
    byteio::Reader r{data, len, "patch pack"};
    r.expect_magic(kPackMagic);
    const uint32_t count = r.u32("sample count");
    std::vector<PatchSample> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        PatchSample s;
        const uint8_t label = r.u8("label");
        if (label > 1) {
            throw FormatError("patch pack: invalid label " + std::to_string(label) +
                              " before offset " + std::to_string(r.pos));
        }
        s.label = label;
        const uint16_t id_len = r.u16("slide id length");
        std::string id(id_len, '\0');
        r.bytes(reinterpret_cast<uint8_t*>(id.data()), id_len, "slide id");
        s.origin.slide_id = std::move(id);
        s.origin.viewfield = r.u16("viewfield");
        s.origin.top = r.u16("top");
        s.origin.left = r.u16("left");
        uint8_t buf[kPatchBytes];
        r.bytes(buf, kPatchBytes, "pixels");
        s.pixels = Tensor({kPatchSize, kPatchSize, kPatchChannels}, 0.0f);
        for (size_t j = 0; j < kPatchBytes; ++j)
            s.pixels[static_cast<int64_t>(j)] = static_cast<float>(buf[j]);
        out.push_back(std::move(s));
    }
    if (r.remaining() != 0) {
        throw FormatError("patch pack: " + std::to_string(r.remaining()) +
                          " trailing bytes after sample " + std::to_string(count) +
                          " at offset " + std::to_string(r.pos));
    }
    return out;
}

void save_patch_pack(const std::vector<PatchSample>& samples, const std::string& path) {
    byteio::write_file(path, patch_pack_to_bytes(samples));
}

std::vector<PatchSample> load_patch_pack(const std::string& path) {
    const std::vector<uint8_t> bytes = byteio::read_file(path);
    return patch_pack_from_bytes(bytes.data(), bytes.size());
}

}  // namespace bsc
