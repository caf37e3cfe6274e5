#include "bsc/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace bsc {

namespace {

void check_image(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError("write image " + path + ": expected [H,W,3] tensor, got " +
                         Tensor::shape_string(image.shape()));
    }
}

uint8_t to_byte(float v) {
    if (v <= 0.0f) return 0;
    if (v >= 255.0f) return 255;
    return static_cast<uint8_t>(v + 0.5f);
}

std::string lower_ext(const std::string& path) {
    const size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

// Skips PPM whitespace and '#' comment lines.
int next_ppm_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw FormatError(path + ": truncated PPM header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[2];
    f.read(magic, 2);
    if (!f || magic[0] != 'P' || magic[1] != '6') {
        throw FormatError(path + ": not a P6 PPM file");
    }
    const int w = next_ppm_token(f, path);
    const int h = next_ppm_token(f, path);
    const int maxval = next_ppm_token(f, path);
    if (w < 1 || h < 1) throw FormatError(path + ": invalid PPM dimensions");
    if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");

    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(f.gcount()) != raw.size()) {
        throw FormatError(path + ": truncated PPM pixel data (expected " +
                          std::to_string(raw.size()) + " bytes, got " +
                          std::to_string(f.gcount()) + ")");
    }
    Tensor img({h, w, 3}, 0.0f);
    float* dst = img.data();
    for (size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<float>(raw[i]);
    return img;
}

void write_ppm(const Tensor& image, const std::string& path) {
    check_image(image, path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(image.size()));
    const float* src = image.data();
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(src[i]);
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    auto closer = std::unique_ptr<std::FILE, int (*)(std::FILE*)>(fp, std::fclose);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng: out of memory");
    }
    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows;
    int w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(path + ": invalid PNG data");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));

    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
        png_set_expand_gray_1_2_4_to_8(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    raw.resize(static_cast<size_t>(w) * h * 3);
    rows.resize(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor img({h, w, 3}, 0.0f);
    float* dst = img.data();
    for (size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<float>(raw[i]);
    return img;
}

void write_png(const Tensor& image, const std::string& path) {
    check_image(image, path);
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path + " for writing");
    auto closer = std::unique_ptr<std::FILE, int (*)(std::FILE*)>(fp, std::fclose);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng: out of memory");
    }
    const int h = image.dim(0), w = image.dim(1);
    std::vector<uint8_t> raw(static_cast<size_t>(image.size()));
    const float* src = image.data();
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(src[i]);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * w * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path + ": PNG write failed");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "ppm") return read_ppm(path);
    if (ext == "png") return read_png(path);
    throw IoError("unsupported image extension: " + path);
}

void write_image(const Tensor& image, const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "ppm") return write_ppm(image, path);
    if (ext == "png") return write_png(image, path);
    throw IoError("unsupported image extension: " + path);
}

}  // namespace bsc
