#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "granet/graph.hpp"

namespace granet {

/// Named parameter map, "stage.block.layer.kind" dotted names. Iteration
/// order is the sorted name order, which keeps weight initialization,
/// optimizer sweeps and checkpoints deterministic.
template <typename T>
class WeightStore {
public:
    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }

    void add(const std::string& name, Tensor<T> t) {
        if (params_.count(name)) throw Error("duplicate parameter '" + name + "'");
        params_.emplace(name, std::move(t));
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    std::size_t size() const { return params_.size(); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grads() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

/// He-uniform conv parameters: weight ~ U(-b, b) with b = sqrt(6 / fan_in)
/// (variance 2/fan_in, matching the relu-calibrated scheme), bias zero.
template <typename T>
void add_conv_params(WeightStore<T>& ws, const std::string& prefix, int c_out, int c_in, int k,
                     std::mt19937& rng) {
    const T bound = std::sqrt(T(6) / static_cast<T>(c_in * k * k));
    ws.add(prefix + ".w", make_uniform_leaf<T>({c_out, c_in, k, k}, -bound, bound, rng, true));
    ws.add(prefix + ".b", make_leaf<T>({1, c_out, 1, 1}, true));
}

template <typename T>
Tensor<T> conv(Graph<T>& g, const Tensor<T>& x, WeightStore<T>& ws, const std::string& prefix) {
    return g.conv2d(x, ws.at(prefix + ".w"), ws.at(prefix + ".b"));
}

// ---- dense block ----------------------------------------------------------

struct DenseBlockConfig {
    int in_channels = 0;
    int growth_channels = 16;
    int num_layers = 4;
    int out_channels = 0;
};

template <typename T>
void init_dense_block(WeightStore<T>& ws, const std::string& prefix, const DenseBlockConfig& cfg,
                      std::mt19937& rng) {
    for (int t = 0; t < cfg.num_layers; ++t)
        add_conv_params(ws, prefix + ".conv" + std::to_string(t), cfg.growth_channels,
                        cfg.in_channels + t * cfg.growth_channels, 3, rng);
    add_conv_params(ws, prefix + ".transition", cfg.out_channels,
                    cfg.in_channels + cfg.num_layers * cfg.growth_channels, 1, rng);
}

/// Densely connected 3x3 conv+relu layers; every layer sees the block input
/// concatenated with all earlier layer outputs, and a 1x1 transition maps the
/// full concatenation to out_channels. Spatial size is preserved.
template <typename T>
Tensor<T> dense_block(Graph<T>& g, const Tensor<T>& x, const DenseBlockConfig& cfg,
                      WeightStore<T>& ws, const std::string& prefix) {
    if (x.shape.c != cfg.in_channels)
        throw ShapeError("dense_block " + prefix + ": input channels " + std::to_string(x.shape.c) +
                         " != configured " + std::to_string(cfg.in_channels));
    std::vector<Tensor<T>> feats{x};
    for (int t = 0; t < cfg.num_layers; ++t) {
        Tensor<T> cat = feats.size() == 1 ? feats[0] : g.concat_channels(feats);
        feats.push_back(g.relu(conv(g, cat, ws, prefix + ".conv" + std::to_string(t))));
    }
    Tensor<T> all = feats.size() == 1 ? feats[0] : g.concat_channels(feats);
    return conv(g, all, ws, prefix + ".transition");
}

// ---- region-aware (regional non-local) block -------------------------------

/// Spatial partition of a feature map into rows x cols tiles.
struct RegionGrid {
    int rows = 1;
    int cols = 1;
};

struct TileRect {
    int y0 = 0;
    int x0 = 0;
    int h = 0;
    int w = 0;
};

/// Tiles cover the plane exactly once; the last row/column absorbs the
/// remainder when the grid does not divide the map.
inline std::vector<TileRect> region_partition(int h, int w, RegionGrid grid) {
    if (grid.rows < 1 || grid.cols < 1)
        throw ConfigError("region grid must be at least 1x1, got " + std::to_string(grid.rows) +
                          "x" + std::to_string(grid.cols));
    if (grid.rows > h || grid.cols > w)
        throw ShapeError("region grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                         " larger than feature map " + std::to_string(h) + "x" + std::to_string(w));
    const int bh = h / grid.rows;
    const int bw = w / grid.cols;
    std::vector<TileRect> tiles;
    tiles.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
    for (int r = 0; r < grid.rows; ++r) {
        const int y0 = r * bh;
        const int th = (r == grid.rows - 1) ? h - y0 : bh;
        for (int c = 0; c < grid.cols; ++c) {
            const int x0 = c * bw;
            const int tw = (c == grid.cols - 1) ? w - x0 : bw;
            tiles.push_back({y0, x0, th, tw});
        }
    }
    return tiles;
}

struct RABlockConfig {
    int channels = 0;
    RegionGrid grid{};
    int embed_channels = 0; // 0 -> max(1, channels/2)

    int embed() const { return embed_channels > 0 ? embed_channels : std::max(1, channels / 2); }
};

template <typename T>
void init_ra_block(WeightStore<T>& ws, const std::string& prefix, const RABlockConfig& cfg,
                   std::mt19937& rng) {
    const int e = cfg.embed();
    add_conv_params(ws, prefix + ".theta", e, cfg.channels, 1, rng);
    add_conv_params(ws, prefix + ".phi", e, cfg.channels, 1, rng);
    add_conv_params(ws, prefix + ".g", e, cfg.channels, 1, rng);
    add_conv_params(ws, prefix + ".wz", cfg.channels, e, 1, rng);
}

/// Regional non-local attention with the embedded-Gaussian affinity
/// f(x_i, x_j) = exp(theta(x_i) . phi(x_j)), softmax-normalized per tile.
/// theta/phi/g/wz are 1x1 convolutions (position-wise, so they are applied
/// once on the whole map); each (sample, tile) runs its own attention, the
/// tiles are reassembled, projected back by wz and added to the block input.
///
/// `attention_out`, when given, receives the per-tile softmax matrices in
/// (sample-major, tile row-major) order.
template <typename T>
Tensor<T> ra_block(Graph<T>& g, const Tensor<T>& x, const RABlockConfig& cfg, WeightStore<T>& ws,
                   const std::string& prefix, std::vector<Tensor<T>>* attention_out = nullptr) {
    if (x.shape.c != cfg.channels)
        throw ShapeError("ra_block " + prefix + ": input channels " + std::to_string(x.shape.c) +
                         " != configured " + std::to_string(cfg.channels));
    const int N = x.shape.n, H = x.shape.h, W = x.shape.w;
    const int E = cfg.embed();
    Tensor<T> theta = conv(g, x, ws, prefix + ".theta");
    Tensor<T> phi = conv(g, x, ws, prefix + ".phi");
    Tensor<T> gmap = conv(g, x, ws, prefix + ".g");

    const auto tiles = region_partition(H, W, cfg.grid);
    std::vector<Tensor<T>> parts;
    std::vector<RegionPlacement> places;
    parts.reserve(tiles.size() * static_cast<std::size_t>(N));
    for (int ni = 0; ni < N; ++ni) {
        for (const auto& t : tiles) {
            const int P = t.h * t.w;
            Tensor<T> th = g.reshape(g.crop_region(theta, ni, t.y0, t.x0, t.h, t.w), {1, 1, E, P});
            Tensor<T> ph = g.reshape(g.crop_region(phi, ni, t.y0, t.x0, t.h, t.w), {1, 1, E, P});
            Tensor<T> gm = g.reshape(g.crop_region(gmap, ni, t.y0, t.x0, t.h, t.w), {1, 1, E, P});
            Tensor<T> att = g.softmax_rows(g.matmul(g.transpose2d(th), ph)); // (P,P)
            if (attention_out) attention_out->push_back(att);
            Tensor<T> y = g.matmul(att, g.transpose2d(gm)); // (P,E)
            parts.push_back(g.reshape(g.transpose2d(y), {1, E, t.h, t.w}));
            places.push_back({ni, t.y0, t.x0});
        }
    }
    Tensor<T> ymap = g.assemble_regions(parts, places, {N, E, H, W});
    return g.add(conv(g, ymap, ws, prefix + ".wz"), x);
}

// ---- merging block ---------------------------------------------------------

/// Parameter-free channel-group averaging: C channels split into k contiguous
/// groups of C/k, output channel c is the mean of channel c across groups.
template <typename T>
Tensor<T> merging_block(Graph<T>& g, const Tensor<T>& x, int k) {
    if (k < 1) throw ConfigError("merging_block: k must be >= 1, got " + std::to_string(k));
    if (x.shape.c % k != 0)
        throw ShapeError("merging_block: " + std::to_string(x.shape.c) +
                         " channels not divisible by k = " + std::to_string(k));
    const int cprime = x.shape.c / k;
    Tensor<T> acc = g.slice_channels(x, 0, cprime);
    for (int i = 1; i < k; ++i) acc = g.add(acc, g.slice_channels(x, i * cprime, cprime));
    return g.scalar_scale(acc, T(1) / static_cast<T>(k));
}

} // namespace granet
