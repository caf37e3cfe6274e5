#pragma once

#include <string>

#include "bsc/tensor.hpp"

namespace bsc {

// Classification unit: 20x20 RGB windows of a view-field.
constexpr int kPatchSize = 20;
constexpr int kPatchChannels = 3;

struct PatchOrigin {
    std::string slide_id;
    int viewfield = 0;
    int top = 0;
    int left = 0;

    bool operator==(const PatchOrigin& o) const {
        return slide_id == o.slide_id && viewfield == o.viewfield && top == o.top &&
               left == o.left;
    }
};

// pixels hold raw byte values (0..255) in a [20,20,3] tensor; normalization
// to [0,1] happens at the network boundary so the stored data stays exact.
struct PatchSample {
    Tensor pixels;
    int label = 0;  // 0 negative, 1 positive
    PatchOrigin origin;
};

}  // namespace bsc
