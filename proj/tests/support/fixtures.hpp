#pragma once

#include <random>
#include <vector>

#include "granet/image.hpp"
#include "granet/tensor.hpp"

namespace fixtures {

template <typename T>
granet::Tensor<T> rand_tensor(granet::Shape s, std::mt19937& rng, T lo = T(-1), T hi = T(1)) {
    return granet::make_uniform_leaf<T>(s, lo, hi, rng);
}

// Direct quadruple-loop convolution, zero padding (k-1)/2, stride 1. Kept
// deliberately naive and independent of the engine's im2col/GEMM path.
template <typename T>
std::vector<T> conv2d_oracle(const std::vector<T>& x, granet::Shape xs, const std::vector<T>& w,
                             granet::Shape wsh, const std::vector<T>& bias) {
    const int N = xs.n, CI = xs.c, H = xs.h, W = xs.w;
    const int CO = wsh.n, KH = wsh.h, KW = wsh.w;
    const int ph = (KH - 1) / 2, pw = (KW - 1) / 2;
    std::vector<T> out(static_cast<std::size_t>(N) * CO * H * W, T(0));
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < CO; ++co)
            for (int y = 0; y < H; ++y)
                for (int xw = 0; xw < W; ++xw) {
                    T acc = bias[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < CI; ++ci)
                        for (int r = 0; r < KH; ++r)
                            for (int s = 0; s < KW; ++s) {
                                const int sy = y + r - ph, sx = xw + s - pw;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += x[static_cast<std::size_t>(xs.at(n, ci, sy, sx))] *
                                       w[static_cast<std::size_t>(wsh.at(co, ci, r, s))];
                            }
                    out[static_cast<std::size_t>(granet::Shape{N, CO, H, W}.at(n, co, y, xw))] = acc;
                }
    return out;
}

template <typename T>
std::vector<T> matmul_oracle(const std::vector<T>& a, int m, int k, const std::vector<T>& b, int n) {
    std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int t = 0; t < k; ++t)
                acc += a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * n + j];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return out;
}

// Smooth random background (bilinear-upsampled coarse noise) with a few
// solid rectangles, giving the de-rainer structure to preserve.
inline granet::ImageF32 make_clean_image(int h, int w, std::mt19937& rng) {
    granet::ImageF32 img = granet::make_image(h, w);
    std::uniform_real_distribution<float> u01(0.f, 1.f);
    constexpr int G = 6;
    for (int c = 0; c < 3; ++c) {
        float grid[G][G];
        for (auto& row : grid)
            for (auto& v : row) v = 0.15f + 0.7f * u01(rng);
        for (int y = 0; y < h; ++y) {
            const float fy = h > 1 ? static_cast<float>(y) / (h - 1) * (G - 1) : 0.f;
            const int iy = std::min(static_cast<int>(fy), G - 2);
            const float wy = fy - iy;
            for (int x = 0; x < w; ++x) {
                const float fx = w > 1 ? static_cast<float>(x) / (w - 1) * (G - 1) : 0.f;
                const int ix = std::min(static_cast<int>(fx), G - 2);
                const float wx = fx - ix;
                img.at(c, y, x) = (1 - wy) * ((1 - wx) * grid[iy][ix] + wx * grid[iy][ix + 1]) +
                                  wy * ((1 - wx) * grid[iy + 1][ix] + wx * grid[iy + 1][ix + 1]);
            }
        }
    }
    std::uniform_int_distribution<int> ux(0, std::max(0, w - 2)), uy(0, std::max(0, h - 2));
    for (int r = 0; r < 4; ++r) {
        const int x0 = ux(rng), y0 = uy(rng);
        const int x1 = std::min(w, x0 + 2 + static_cast<int>(u01(rng) * w / 3));
        const int y1 = std::min(h, y0 + 2 + static_cast<int>(u01(rng) * h / 3));
        const float col[3] = {u01(rng), u01(rng), u01(rng)};
        for (int c = 0; c < 3; ++c)
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) img.at(c, y, x) = 0.2f + 0.6f * col[c];
    }
    return img;
}

} // namespace fixtures
