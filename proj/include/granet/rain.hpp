#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "granet/config.hpp"
#include "granet/image.hpp"

namespace granet {

struct RainResult {
    ImageF32 rainy; // clamp(clean + mask, 0, 1)
    ImageF32 mask;  // pre-clamp additive streak field, >= 0
};

namespace detail {

// Distance from a point to a segment.
inline double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Render one anti-aliased streak into the (shared) mask plane: full
// intensity inside the core, a 1-pixel linear edge, exactly zero beyond
// width/2 + 0.5.
inline void draw_streak(std::vector<float>& plane, int h, int w, double cx, double cy,
                        double length, double angle_rad, double width, double intensity) {
    const double dx = std::sin(angle_rad), dy = std::cos(angle_rad); // from vertical
    const double ax = cx - dx * length / 2, ay = cy - dy * length / 2;
    const double bx = cx + dx * length / 2, by = cy + dy * length / 2;
    const double support = width / 2 + 0.5;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - support)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + support)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - support)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + support)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = dist_to_segment(x, y, ax, ay, bx, by);
            const double cov = std::clamp(width / 2 + 0.5 - d, 0.0, 1.0);
            if (cov > 0)
                plane[static_cast<std::size_t>(y) * w + x] += static_cast<float>(intensity * cov);
        }
}

} // namespace detail

/// Additive synthetic rain: seeded streak segments rendered as soft strokes
/// plus an optional low-frequency mist field. The streak field is achromatic
/// (identical across channels). Deterministic for a given rng state.
inline RainResult synth_rain(const ImageF32& clean, const RainSettings& params, std::mt19937& rng) {
    params.validate();
    const int h = clean.h, w = clean.w;
    std::vector<float> plane(static_cast<std::size_t>(h) * w, 0.f);

    std::uniform_int_distribution<int> n_streaks(params.streaks_min, params.streaks_max);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(h));
    std::uniform_real_distribution<double> ulen(params.length_min, params.length_max);
    std::uniform_real_distribution<double> uwidth(params.width_min, params.width_max);
    std::uniform_real_distribution<double> uint_(params.intensity_min, params.intensity_max);
    std::normal_distribution<double> uangle(params.angle_mean_deg, params.angle_std_deg);

    const int count = n_streaks(rng);
    for (int s = 0; s < count; ++s) {
        const double cx = ux(rng), cy = uy(rng);
        const double len = ulen(rng);
        const double ang = uangle(rng) * M_PI / 180.0;
        const double wid = uwidth(rng);
        const double inten = uint_(rng);
        detail::draw_streak(plane, h, w, cx, cy, len, ang, wid, inten);
    }

    if (params.mist_strength > 0) {
        // low-frequency field: coarse 9x9 noise, bilinearly upsampled
        constexpr int G = 9;
        float grid[G][G];
        std::uniform_real_distribution<float> ug(0.f, 1.f);
        for (int gy = 0; gy < G; ++gy)
            for (int gx = 0; gx < G; ++gx) grid[gy][gx] = ug(rng);
        for (int y = 0; y < h; ++y) {
            const double fy = h > 1 ? static_cast<double>(y) / (h - 1) * (G - 1) : 0.0;
            const int iy = std::min(static_cast<int>(fy), G - 2);
            const double wy = fy - iy;
            for (int x = 0; x < w; ++x) {
                const double fx = w > 1 ? static_cast<double>(x) / (w - 1) * (G - 1) : 0.0;
                const int ix = std::min(static_cast<int>(fx), G - 2);
                const double wx = fx - ix;
                const double v = (1 - wy) * ((1 - wx) * grid[iy][ix] + wx * grid[iy][ix + 1]) +
                                 wy * ((1 - wx) * grid[iy + 1][ix] + wx * grid[iy + 1][ix + 1]);
                plane[static_cast<std::size_t>(y) * w + x] +=
                    static_cast<float>(params.mist_strength * v);
            }
        }
    }

    RainResult out{make_image(h, w), make_image(h, w)};
    const std::size_t hw = plane.size();
    for (int c = 0; c < 3; ++c)
        std::copy(plane.begin(), plane.end(), out.mask.data.begin() + static_cast<std::size_t>(c) * hw);
    for (std::size_t i = 0; i < out.rainy.data.size(); ++i)
        out.rainy.data[i] = std::clamp(clean.data[i] + out.mask.data[i], 0.0f, 1.0f);
    return out;
}

} // namespace granet
