#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "granet/image.hpp"

namespace granet {

/// Single-channel plane on the [0,255] scale used by the metrics.
struct LumaPlane {
    int h = 0;
    int w = 0;
    std::vector<float> v;

    float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B, scaled to [0,255].
inline LumaPlane rgb_to_luminance(const ImageF32& img) {
    LumaPlane p{img.h, img.w, std::vector<float>(static_cast<std::size_t>(img.h) * img.w)};
    const std::size_t hw = p.v.size();
    for (std::size_t i = 0; i < hw; ++i)
        p.v[i] = 255.0f * (0.299f * img.data[i] + 0.587f * img.data[hw + i] +
                           0.114f * img.data[2 * hw + i]);
    return p;
}

/// 10 log10(255^2 / MSE); identical planes return +infinity.
inline double psnr(const LumaPlane& a, const LumaPlane& b) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError("psnr: plane sizes differ, " + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                         std::to_string(b.w));
    double mse = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = static_cast<double>(a.v[i]) - b.v[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.v.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {
// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
inline const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(121);
        double sum = 0.0;
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
                const double dy = y - 5, dx = x - 5;
                w[static_cast<std::size_t>(y) * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                sum += w[static_cast<std::size_t>(y) * 11 + x];
            }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}
} // namespace detail

/// Mean local SSIM over all fully-inside 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, L = 255). Symmetric in (a, b); ssim(x, x) == 1.
inline double ssim(const LumaPlane& a, const LumaPlane& b) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError("ssim: plane sizes differ");
    if (a.h < 11 || a.w < 11)
        throw ShapeError("ssim: image " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                         " smaller than the 11x11 window");
    const double C1 = (0.01 * 255) * (0.01 * 255);
    const double C2 = (0.03 * 255) * (0.03 * 255);
    const auto& win = detail::ssim_window();

    double total = 0.0;
    std::int64_t count = 0;
    for (int y0 = 0; y0 + 11 <= a.h; ++y0) {
        for (int x0 = 0; x0 + 11 <= a.w; ++x0) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int dy = 0; dy < 11; ++dy)
                for (int dx = 0; dx < 11; ++dx) {
                    const double wgt = win[static_cast<std::size_t>(dy) * 11 + dx];
                    const double va = a.at(y0 + dy, x0 + dx);
                    const double vb = b.at(y0 + dy, x0 + dx);
                    mx += wgt * va;
                    my += wgt * vb;
                    xx += wgt * va * va;
                    yy += wgt * vb * vb;
                    xy += wgt * va * vb;
                }
            const double sx = xx - mx * mx;
            const double sy = yy - my * my;
            const double sxy = xy - mx * my;
            const double num = (2 * mx * my + C1) * (2 * sxy + C2);
            const double den = (mx * mx + my * my + C1) * (sx + sy + C2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace granet
