#ifndef POSEDIFF_IMAGE_HPP
#define POSEDIFF_IMAGE_HPP

// Float RGB images as (H, W, 3) tensors with values in [0,1], plus PNG I/O
// and deterministic resampling.

#include <png.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace posediff {

using ImageF = Tensor<float>;

inline ImageF make_image(int64_t h, int64_t w, float r = 0, float g = 0, float b = 0) {
    ImageF img({h, w, 3});
    for (int64_t i = 0; i < h * w; i++) {
        img[i * 3 + 0] = r;
        img[i * 3 + 1] = g;
        img[i * 3 + 2] = b;
    }
    return img;
}

inline uint8_t quantize8(float x) {
    float v = std::round(x * 255.0f);
    if (v < 0) {
        v = 0;
    }
    if (v > 255) {
        v = 255;
    }
    return static_cast<uint8_t>(v);
}

inline void write_png(const std::string& path, const ImageF& img) {
    if (img.rank() != 3 || img.shape[2] != 3) {
        throw std::invalid_argument("write_png: expected (H,W,3), got " + shape_str(img.shape));
    }
    int64_t h = img.shape[0], w = img.shape[1];
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) {
        throw IoError("cannot open for write", path);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) {
            png_destroy_write_struct(&png, &info);
        }
        std::fclose(fp);
        throw IoError("png write failed", path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; y++) {
        for (int64_t x = 0; x < w * 3; x++) {
            row[static_cast<size_t>(x)] = quantize8(img[y * w * 3 + x]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline ImageF read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) {
        throw IoError("cannot open for read", path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) {
            png_destroy_read_struct(&png, &info, nullptr);
        }
        std::fclose(fp);
        throw IoError("png read failed", path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) {
        png_set_strip_16(png);
    }
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageF img({static_cast<int64_t>(h), static_cast<int64_t>(w), 3});
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (png_uint_32 y = 0; y < h; y++) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w * 3; x++) {
            img[static_cast<int64_t>(y) * w * 3 + x] = row[x] / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// Exact area-weighted resampling. Downscales average source coverage;
// upscales behave like smooth interpolation of pixel areas.
inline ImageF resize_area(const ImageF& img, int64_t oh, int64_t ow) {
    if (img.rank() != 3 || img.shape[2] != 3) {
        throw std::invalid_argument("resize_area: expected (H,W,3)");
    }
    int64_t h = img.shape[0], w = img.shape[1];
    if (oh < 1 || ow < 1) {
        throw std::invalid_argument("resize_area: bad target size");
    }
    ImageF out({oh, ow, 3});
    double sy = static_cast<double>(h) / static_cast<double>(oh);
    double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (int64_t oy = 0; oy < oh; oy++) {
        double y0 = oy * sy, y1 = (oy + 1) * sy;
        int64_t iy0 = static_cast<int64_t>(std::floor(y0));
        int64_t iy1 = std::min<int64_t>(h, static_cast<int64_t>(std::ceil(y1)));
        for (int64_t ox = 0; ox < ow; ox++) {
            double x0 = ox * sx, x1 = (ox + 1) * sx;
            int64_t ix0 = static_cast<int64_t>(std::floor(x0));
            int64_t ix1 = std::min<int64_t>(w, static_cast<int64_t>(std::ceil(x1)));
            double acc[3] = {0, 0, 0};
            double area = 0;
            for (int64_t iy = iy0; iy < iy1; iy++) {
                double wy = std::min<double>(y1, iy + 1) - std::max<double>(y0, iy);
                for (int64_t ix = ix0; ix < ix1; ix++) {
                    double wx = std::min<double>(x1, ix + 1) - std::max<double>(x0, ix);
                    double wgt = wy * wx;
                    const float* p = img.data() + (iy * w + ix) * 3;
                    acc[0] += wgt * p[0];
                    acc[1] += wgt * p[1];
                    acc[2] += wgt * p[2];
                    area += wgt;
                }
            }
            float* q = out.data() + (oy * ow + ox) * 3;
            q[0] = static_cast<float>(acc[0] / area);
            q[1] = static_cast<float>(acc[1] / area);
            q[2] = static_cast<float>(acc[2] / area);
        }
    }
    return out;
}

inline ImageF resize_nearest(const ImageF& img, int64_t oh, int64_t ow) {
    int64_t h = img.shape[0], w = img.shape[1];
    ImageF out({oh, ow, 3});
    for (int64_t oy = 0; oy < oh; oy++) {
        int64_t iy = std::min<int64_t>(h - 1, oy * h / oh);
        for (int64_t ox = 0; ox < ow; ox++) {
            int64_t ix = std::min<int64_t>(w - 1, ox * w / ow);
            for (int j = 0; j < 3; j++) {
                out[(oy * ow + ox) * 3 + j] = img[(iy * w + ix) * 3 + j];
            }
        }
    }
    return out;
}

inline double image_mse(const ImageF& a, const ImageF& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("image_mse: shape mismatch");
    }
    double s = 0;
    for (int64_t i = 0; i < a.numel(); i++) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

inline double image_mean_abs_diff(const ImageF& a, const ImageF& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("image_mean_abs_diff: shape mismatch");
    }
    double s = 0;
    for (int64_t i = 0; i < a.numel(); i++) {
        s += std::abs(static_cast<double>(a[i]) - b[i]);
    }
    return s / static_cast<double>(a.numel());
}

}  // namespace posediff

#endif  // POSEDIFF_IMAGE_HPP
