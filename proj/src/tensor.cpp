#include "bsc/tensor.hpp"

#include <sstream>

namespace bsc {

std::string Tensor::shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    int64_t n = 1;
    for (int d : shape) {
        if (d < 1) {
            throw ShapeError("tensor: invalid shape " + shape_string(shape) +
                             " (all dimensions must be >= 1)");
        }
        n *= d;
    }
    shape_ = std::move(shape);
    data_.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data) {
    Tensor t(std::move(shape), 0.0f);
    if (static_cast<size_t>(t.size()) != data.size()) {
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(t.shape_));
    }
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::slice_patch(int top, int left, int h, int w) const {
    if (rank() != 3) throw ShapeError("slice_patch: expected rank-3 [H,W,C] tensor, got " +
                                      shape_string(shape_));
    const int img_h = shape_[0], img_w = shape_[1], ch = shape_[2];
    if (h < 1 || w < 1 || top < 0 || left < 0 || top + h > img_h || left + w > img_w) {
        throw BoundsError("slice_patch: window (" + std::to_string(top) + "," +
                          std::to_string(left) + "," + std::to_string(h) + "," +
                          std::to_string(w) + ") outside image " + shape_string(shape_));
    }
    Tensor out({h, w, ch}, 0.0f);
    const float* src = data_.data();
    float* dst = out.data();
    for (int y = 0; y < h; ++y) {
        const float* row = src + (static_cast<int64_t>(top + y) * img_w + left) * ch;
        std::memcpy(dst + static_cast<int64_t>(y) * w * ch, row,
                    static_cast<size_t>(w) * ch * sizeof(float));
    }
    return out;
}

void Tensor::embed_patch(const Tensor& patch, int top, int left) {
    if (rank() != 3 || patch.rank() != 3 || patch.dim(2) != dim(2)) {
        throw ShapeError("embed_patch: rank-3 tensors with matching channels required");
    }
    const int h = patch.dim(0), w = patch.dim(1), ch = dim(2);
    if (top < 0 || left < 0 || top + h > dim(0) || left + w > dim(1)) {
        throw BoundsError("embed_patch: window outside image");
    }
    const float* src = patch.data();
    float* dst = data_.data();
    for (int y = 0; y < h; ++y) {
        std::memcpy(dst + (static_cast<int64_t>(top + y) * dim(1) + left) * ch,
                    src + static_cast<int64_t>(y) * w * ch,
                    static_cast<size_t>(w) * ch * sizeof(float));
    }
}

}  // namespace bsc
