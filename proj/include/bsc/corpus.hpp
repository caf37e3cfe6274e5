#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsc/patch.hpp"
#include "bsc/tensor.hpp"

namespace bsc {

// Pixel-coordinate bounding box, half-open on both axes:
// covers x in [x_min, x_max) and y in [y_min, y_max).
struct BBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    int width() const { return x_max - x_min; }
    int height() const { return y_max - y_min; }
    int64_t area() const { return static_cast<int64_t>(width()) * height(); }
    bool operator==(const BBox&) const = default;
};

struct Annotation {
    std::string slide_id;
    int viewfield = 0;
    BBox bbox;
    bool operator==(const Annotation&) const = default;
};

// One microscope view-field. Image tensor is [H,W,3] holding byte values
// (0..255) as floats; normalization happens at the network boundary.
struct ViewField {
    std::string slide_id;
    int index = 0;
    Tensor image{{kPatchSize, kPatchSize, kPatchChannels}, 0.0f};
};

struct Slide {
    std::string id;
    std::vector<ViewField> fields;  // fields[i].index == i
};

struct Corpus {
    std::vector<Slide> slides;
    std::vector<Annotation> annotations;

    const Slide& slide(const std::string& id) const;          // DataError if absent
    std::vector<BBox> bboxes_for(const std::string& slide_id, int viewfield) const;
};

// Throws DataError unless the bbox is non-degenerate and inside an h x w image.
void validate_bbox(const BBox& box, int image_h, int image_w);

// ---------------------------------------------------------------------------
// Consecutive 60/20/20 split

struct SplitFractions {
    double train = 0.6;
    double unused = 0.2;
    double test = 0.2;
};

// Half-open index range over a slide's view-fields.
struct IndexRange {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool empty() const { return begin >= end; }
    bool contains(int i) const { return i >= begin && i < end; }
    bool operator==(const IndexRange&) const = default;
};

struct SlideSplit {
    IndexRange train;
    IndexRange unused;
    IndexRange test;
    // Set when the slide is too short to populate every range (e.g. n=1).
    bool degenerate = false;
    bool operator==(const SlideSplit&) const = default;
};

struct SplitAssignment {
    std::vector<std::pair<std::string, SlideSplit>> slides;

    const SlideSplit& for_slide(const std::string& id) const;  // DataError if absent
};

// Train takes the first ceil(train_frac * n) indices, test the last
// floor(test_frac * n), and whatever remains in between stays unused so the
// overlap-leakage gap survives rounding. Throws DataError when n == 0.
SlideSplit split_slide(int n_viewfields, const SplitFractions& fractions = {});
SplitAssignment split_corpus(const Corpus& corpus, const SplitFractions& fractions = {});

// ---------------------------------------------------------------------------
// Patch labeling and extraction

struct LabelConfig {
    // A window is positive when, for some bbox,
    //   intersection_area / min(patch_area, bbox_area) >= min_overlap.
    // The min() denominator keeps bacilli smaller than a patch positive; with
    // a plain patch-area denominator a fully contained 10x6 rod (60 px of 400)
    // could never be labeled.
    float min_overlap = 0.25f;
};

// 1 = positive, 0 = negative. Window is the 20x20 patch at (top, left).
int label_patch(int top, int left, const std::vector<BBox>& boxes,
                const LabelConfig& cfg = {});

// One window per bbox, centered on the bbox center and clamped to the image;
// bboxes larger than a patch additionally get a stride-20 tiling of windows.
// Every emitted window passes label_patch; duplicate positions are dropped.
std::vector<PatchSample> extract_positive_patches(const ViewField& vf,
                                                  const std::vector<BBox>& boxes,
                                                  const LabelConfig& cfg = {});

// k distinct window positions drawn uniformly (seeded) from the stride-1 set
// of negative-labeled positions. Throws DataError when fewer than k exist.
std::vector<PatchSample> sample_negatives(const ViewField& vf,
                                          const std::vector<BBox>& boxes, int k,
                                          uint64_t seed, const LabelConfig& cfg = {});

// ---------------------------------------------------------------------------
// Dataset assembly

enum class Partition { Train, Test };

// Exhaustive non-overlapping stride-20 tiling of every view-field in the
// given partition, labeled via label_patch. Row-major within a field, fields
// ascending, slides in corpus order.
std::vector<PatchSample> enumerate_tiling(const Corpus& corpus,
                                          const SplitAssignment& split,
                                          Partition part, const LabelConfig& cfg = {});

struct PatchDataset {
    std::vector<PatchSample> train;
    std::vector<PatchSample> test;
};

// Train: balanced -> per slide, all positive patches from the train range
// plus an equal count of sampled negatives (per-slide derived seeds);
// unbalanced -> exhaustive train-range tiling at the true skew.
// Test: always the exhaustive test-range tiling.
PatchDataset build_patch_dataset(const Corpus& corpus, const SplitAssignment& split,
                                 bool balanced, uint64_t seed,
                                 const LabelConfig& cfg = {});

// ---------------------------------------------------------------------------
// On-disk corpus layout:
//   <dir>/manifest.json      {"version":1,"slides":[{"id":...,"viewfields":N}]}
//   <dir>/images/<id>_<k>.<ext>   one image per view-field (ppm or png)
//   <dir>/annotations.csv    header + one row per bbox

extern const char* const kAnnotationsCsvHeader;

void save_corpus_dir(const Corpus& corpus, const std::string& dir,
                     const std::string& image_ext = "ppm");
Corpus load_corpus_dir(const std::string& dir);

// ---------------------------------------------------------------------------
// Binary patch pack ("BPAT"): count u32, then per sample label u8,
// origin (len-prefixed slide id, viewfield/top/left u16), 1200 raw RGB bytes.

std::vector<uint8_t> patch_pack_to_bytes(const std::vector<PatchSample>& samples);
std::vector<PatchSample> patch_pack_from_bytes(const uint8_t* data, size_t len);
void save_patch_pack(const std::vector<PatchSample>& samples, const std::string& path);
std::vector<PatchSample> load_patch_pack(const std::string& path);

}  // namespace bsc
