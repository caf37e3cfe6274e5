#pragma once

#include <string>

#include "bsc/tensor.hpp"

namespace bsc {

// Images travel as [H,W,3] tensors holding byte values 0..255.

Tensor read_ppm(const std::string& path);
void write_ppm(const Tensor& image, const std::string& path);

Tensor read_png(const std::string& path);
void write_png(const Tensor& image, const std::string& path);

/// Dispatch on extension (.ppm / .png).
Tensor read_image(const std::string& path);
void write_image(const Tensor& image, const std::string& path);

}  // namespace bsc
