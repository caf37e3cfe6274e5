#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "bsc/errors.hpp"

namespace bsc {

/// Dense N-dimensional array of 32-bit reals, row-major flat storage.
/// Images use channels-last [H, W, C]; conv weights use [kh, kw, in, out].
/// No broadcasting: every shape mismatch is an error.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, float fill);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor from_data(std::vector<int> shape, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // [H, W, C] accessors; the hot paths index flat via data().
    float& at3(int y, int x, int c) {
        return data_[static_cast<size_t>((static_cast<int64_t>(y) * shape_[1] + x) * shape_[2] + c)];
    }
    float at3(int y, int x, int c) const {
        return data_[static_cast<size_t>((static_cast<int64_t>(y) * shape_[1] + x) * shape_[2] + c)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Bit-exact equality (shape and payload).
    bool equals(const Tensor& other) const {
        return shape_ == other.shape_ &&
               std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
    }

    template <class F>
    Tensor map(F f) const {
        Tensor out = *this;
        for (auto& v : out.data_) v = f(v);
        return out;
    }

    template <class F>
    static Tensor zip(const Tensor& a, const Tensor& b, F f) {
        if (!a.same_shape(b)) {
            throw ShapeError("tensor zip: shape mismatch (" + shape_string(a.shape_) +
                             " vs " + shape_string(b.shape_) + ")");
        }
        Tensor out = a;
        for (size_t i = 0; i < out.data_.size(); ++i) out.data_[i] = f(a.data_[i], b.data_[i]);
        return out;
    }

    /// Contiguous copy of the [top, top+h) x [left, left+w) window of a
    /// rank-3 [H, W, C] tensor, channel order preserved.
    Tensor slice_patch(int top, int left, int h, int w) const;

    /// Writes `patch` back at (top, left); inverse of slice_patch.
    void embed_patch(const Tensor& patch, int top, int left);

    static std::string shape_string(const std::vector<int>& shape);
    std::string shape_string() const { return shape_string(shape_); }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace bsc
