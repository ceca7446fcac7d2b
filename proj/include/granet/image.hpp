#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "granet/core.hpp"
#include "granet/tensor.hpp"

namespace granet {

/// 8-bit interleaved RGB, as stored in files.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb; // h*w*3, row-major interleaved
};

/// Planar float RGB in [0,1]. Values are clamped only at I/O boundaries;
/// intermediate results (masks, residuals) may leave the range.
struct ImageF32 {
    int h = 0;
    int w = 0;
    std::vector<float> data; // 3 planes of h*w

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
};

inline ImageF32 make_image(int h, int w, float fill = 0.f) {
    return ImageF32{h, w, std::vector<float>(static_cast<std::size_t>(h) * w * 3, fill)};
}

inline ImageF32 to_f32(const ImageU8& u) {
    ImageF32 f = make_image(u.h, u.w);
    const std::size_t hw = static_cast<std::size_t>(u.h) * u.w;
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            f.data[static_cast<std::size_t>(c) * hw + i] = u.rgb[i * 3 + c] / 255.0f;
    return f;
}

/// Clamp to [0,1] and quantize, rounding half away from zero.
inline ImageU8 to_u8(const ImageF32& f) {
    ImageU8 u{f.h, f.w, std::vector<std::uint8_t>(static_cast<std::size_t>(f.h) * f.w * 3)};
    const std::size_t hw = static_cast<std::size_t>(f.h) * f.w;
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(f.data[static_cast<std::size_t>(c) * hw + i], 0.0f, 1.0f);
            u.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return u;
}

inline Tensor<float> to_tensor(const ImageF32& f) {
    Tensor<float> t = make_leaf<float>({1, 3, f.h, f.w});
    std::copy(f.data.begin(), f.data.end(), t.data->begin());
    return t;
}

inline ImageF32 from_tensor(const Tensor<float>& t, int sample = 0) {
    if (t.shape.c != 3 || sample < 0 || sample >= t.shape.n)
        throw ShapeError("from_tensor: need a 3-channel tensor and a valid sample, got " +
                         t.shape.str());
    ImageF32 f = make_image(t.shape.h, t.shape.w);
    const std::size_t len = static_cast<std::size_t>(3) * t.shape.h * t.shape.w;
    std::copy(t.ptr() + static_cast<std::size_t>(sample) * len,
              t.ptr() + static_cast<std::size_t>(sample + 1) * len, f.data.begin());
    return f;
}

inline void flip_horizontal(ImageF32& f) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w / 2; ++x)
                std::swap(f.at(c, y, x), f.at(c, y, f.w - 1 - x));
}

// ---- PNG I/O ---------------------------------------------------------------

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
} // namespace detail

/// Decode an 8-bit PNG as RGB. Grayscale and palette images are expanded to
/// RGB, alpha is stripped; 16-bit files are rejected.
inline ImageU8 load_image(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image '" + path + "'");

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG '" + path + "' (corrupt or truncated)");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "' is a 16-bit PNG; only 8-bit images are supported");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.w = static_cast<int>(png_get_image_width(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "': unsupported PNG layout");
    }
    img.rgb.resize(static_cast<std::size_t>(img.h) * img.w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<std::size_t>(y)] = img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void save_image(const std::string& path, const ImageU8& img) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write image '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void save_image(const std::string& path, const ImageF32& img) {
    save_image(path, to_u8(img));
}

/// Width/height from the IHDR chunk without decoding the pixel data.
inline std::pair<int, int> png_dimensions(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image '" + path + "'");
    std::uint8_t buf[24];
    if (std::fread(buf, 1, 24, fp.get()) != 24 || png_sig_cmp(buf, 0, 8))
        throw IoError("'" + path + "' is not a PNG file");
    auto be32 = [&](int off) {
        return (static_cast<std::uint32_t>(buf[off]) << 24) | (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
               (static_cast<std::uint32_t>(buf[off + 2]) << 8) | static_cast<std::uint32_t>(buf[off + 3]);
    };
    return {static_cast<int>(be32(20)), static_cast<int>(be32(16))}; // {h, w}
}

// ---- resampling -------------------------------------------------------------

/// Bilinear resample with the pixel-center convention
/// src = (dst + 0.5) * (src_size / dst_size) - 0.5, edges clamped.
inline ImageF32 bilinear_resize(const ImageF32& src, int nh, int nw) {
    if (nh < 1 || nw < 1) throw ShapeError("bilinear_resize: target size must be positive");
    ImageF32 dst = make_image(nh, nw);
    const double sy = static_cast<double>(src.h) / nh;
    const double sx = static_cast<double>(src.w) / nw;
    for (int y = 0; y < nh; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < nw; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                                 wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
                dst.at(c, y, x) = static_cast<float>(v);
            }
        }
    }
    return dst;
}

/// Downscale so the long side equals max_side, preserving aspect ratio;
/// images already within the bound pass through untouched.
inline ImageF32 resize_long_side(const ImageF32& img, int max_side = 512) {
    const int long_side = std::max(img.h, img.w);
    if (long_side <= max_side) return img;
    const double scale = static_cast<double>(max_side) / long_side;
    const int nh = std::max(1, static_cast<int>(std::lround(img.h * scale)));
    const int nw = std::max(1, static_cast<int>(std::lround(img.w * scale)));
    return bilinear_resize(img, nh, nw);
}

} // namespace granet
