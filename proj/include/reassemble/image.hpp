#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "reassemble/common.hpp"

namespace reassemble {

class CorruptImage : public Error {
public:
    using Error::Error;
};

/// Interleaved 8-bit RGBA image, row-major, origin at the top-left.
struct ImageRgba {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;  // width * height * 4

    ImageRgba() = default;
    ImageRgba(int w, int h) : width(w), height(h), data(size_t(w) * h * 4, 0) {}

    uint8_t* px(int x, int y) { return data.data() + (size_t(y) * width + x) * 4; }
    const uint8_t* px(int x, int y) const { return data.data() + (size_t(y) * width + x) * 4; }
    bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// Binary foreground mask. Nonzero = foreground.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), data(size_t(w) * h, 0) {}

    uint8_t& at(int x, int y) { return data[size_t(y) * width + x]; }
    uint8_t at(int x, int y) const { return data[size_t(y) * width + x]; }
    bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    bool fg(int x, int y) const { return contains(x, y) && data[size_t(y) * width + x] != 0; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
};

/// Single-channel double image in [0, 1] (or unbounded for response maps).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), data(size_t(w) * h, fill) {}

    double& at(int x, int y) { return data[size_t(y) * width + x]; }
    double at(int x, int y) const { return data[size_t(y) * width + x]; }
    bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    /// Clamped access, replicating edge pixels.
    double at_clamped(int x, int y) const {
        x = std::clamp(x, 0, width - 1);
        y = std::clamp(y, 0, height - 1);
        return data[size_t(y) * width + x];
    }
};

inline BinaryMask mask_from_alpha(const ImageRgba& img) {
    BinaryMask m(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            m.at(x, y) = img.px(x, y)[3] > 0 ? 1 : 0;
    return m;
}

/// Luma conversion; fully transparent pixels map to black.
inline GrayImage to_gray(const ImageRgba& img) {
    GrayImage g(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const uint8_t* p = img.px(x, y);
            if (p[3] == 0) {
                g.at(x, y) = 0.0;
                continue;
            }
            g.at(x, y) = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// PNG I/O (8-bit, always normalized to RGBA in memory)
// ---------------------------------------------------------------------------

inline ImageRgba read_png(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw CorruptImage("cannot open PNG file: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw CorruptImage("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw CorruptImage("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw CorruptImage("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptImage("error while reading PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_GRAY ||
        color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png, info);

    ImageRgba img(int(png_get_image_width(png, info)), int(png_get_image_height(png, info)));
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + size_t(y) * img.width * 4;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const ImageRgba& img) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw CorruptImage("cannot open PNG file for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw CorruptImage("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw CorruptImage("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw CorruptImage("error while writing PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGBA,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.data.data() + size_t(y) * img.width * 4);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear resize of a multi-channel float buffer given as per-channel planes.
inline GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h) {
    GrayImage dst(out_w, out_h);
    if (src.width == 0 || src.height == 0) return dst;
    const double sx = double(src.width) / out_w;
    const double sy = double(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            double v00 = src.at_clamped(x0, y0);
            double v10 = src.at_clamped(x0 + 1, y0);
            double v01 = src.at_clamped(x0, y0 + 1);
            double v11 = src.at_clamped(x0 + 1, y0 + 1);
            dst.at(x, y) = (1 - wy) * ((1 - wx) * v00 + wx * v10) +
                           wy * ((1 - wx) * v01 + wx * v11);
        }
    }
    return dst;
}

}  // namespace reassemble
