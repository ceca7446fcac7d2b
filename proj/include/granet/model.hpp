#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>

#include "granet/blocks.hpp"

namespace granet {

/// Full two-stage architecture description. Defaults are the desk-scale
/// reference configuration; the use_* switches realise the ablation variants
/// (use_merge = false swaps the merging block for a learned 1x1 conv of the
/// same output width).
struct GraNetConfig {
    std::array<int, 3> coarse_channels{32, 64, 128}; // encoder levels 0..2
    std::array<int, 3> region_grids{4, 2, 1};        // per level, highest resolution first
    int dense_layers = 4;
    int dense_growth = 16;
    int fine_channels = 64;
    int fine_num_dense_blocks = 4;
    int merge_k = 4;
    bool use_ra = true;
    bool use_fine = true;
    bool use_merge = true;
    bool fine_residual = true;

    static constexpr int kNumLevels = 3;
    static constexpr int kPadMultiple = 8; // three stride-2 pools

    void validate() const {
        for (int c : coarse_channels)
            if (c < 1) throw ConfigError("model.coarse_channels entries must be >= 1");
        for (int r : region_grids)
            if (r < 1) throw ConfigError("model.region_grids entries must be >= 1");
        if (dense_layers < 0) throw ConfigError("model.dense_layers must be >= 0");
        if (dense_growth < 1) throw ConfigError("model.dense_growth must be >= 1");
        if (fine_channels < 1) throw ConfigError("model.fine_channels must be >= 1");
        if (fine_num_dense_blocks < 1) throw ConfigError("model.fine_num_dense_blocks must be >= 1");
        if (merge_k < 1) throw ConfigError("model.merge_k must be >= 1");
        if (use_fine && (fine_num_dense_blocks * fine_channels) % merge_k != 0)
            throw ConfigError("fine-stage concat width " +
                              std::to_string(fine_num_dense_blocks * fine_channels) +
                              " not divisible by merge_k = " + std::to_string(merge_k));
    }

    DenseBlockConfig coarse_dense_cfg(int level) const {
        return {level == 0 ? 3 : coarse_channels[static_cast<std::size_t>(level - 1)], dense_growth,
                dense_layers, coarse_channels[static_cast<std::size_t>(level)]};
    }

    // Ascending step j (1..3) runs at encoder level i = 3 - j. The RA block
    // sees the channel count carried down from the previous ascending step.
    int ra_channels(int j) const {
        return j == 1 ? coarse_channels[2] : coarse_channels[static_cast<std::size_t>(kNumLevels - j + 1)];
    }
    int ra_level(int j) const { return kNumLevels - j; }
    RABlockConfig ra_cfg(int j) const {
        const int grid = region_grids[static_cast<std::size_t>(ra_level(j))];
        return {ra_channels(j), {grid, grid}, 0};
    }
    bool needs_adapter(int j) const {
        return ra_channels(j) != coarse_channels[static_cast<std::size_t>(ra_level(j))];
    }
};

template <typename T>
struct ForwardOutputs {
    Tensor<T> mask;      // coarse-grained rain-streak mask, signed, 3 channels
    Tensor<T> coarse;    // input - mask
    Tensor<T> final_out; // fine-stage result (== coarse when the fine stage is off)
};

template <typename T>
struct CoarseOutputs {
    Tensor<T> mask;
    std::array<PoolIndices, 3> pool_indices;
};

template <typename T>
WeightStore<T> init_granet_weights(const GraNetConfig& cfg, std::uint32_t seed) {
    cfg.validate();
    std::mt19937 rng(seed);
    WeightStore<T> ws;
    for (int i = 0; i < GraNetConfig::kNumLevels; ++i)
        init_dense_block(ws, "coarse.enc" + std::to_string(i), cfg.coarse_dense_cfg(i), rng);
    for (int j = 1; j <= GraNetConfig::kNumLevels; ++j) {
        if (cfg.use_ra) init_ra_block(ws, "coarse.ra" + std::to_string(j), cfg.ra_cfg(j), rng);
        if (cfg.needs_adapter(j))
            add_conv_params(ws, "coarse.adapt" + std::to_string(j),
                            cfg.coarse_channels[static_cast<std::size_t>(cfg.ra_level(j))],
                            cfg.ra_channels(j), 1, rng);
    }
    add_conv_params(ws, "coarse.mask", 3, cfg.coarse_channels[0], 3, rng);
    if (cfg.use_fine) {
        add_conv_params(ws, "fine.stem", cfg.fine_channels, 3, 3, rng);
        for (int b = 0; b < cfg.fine_num_dense_blocks; ++b)
            init_dense_block(ws, "fine.block" + std::to_string(b),
                             {cfg.fine_channels, cfg.dense_growth, cfg.dense_layers, cfg.fine_channels},
                             rng);
        const int cat = cfg.fine_num_dense_blocks * cfg.fine_channels;
        if (!cfg.use_merge) add_conv_params(ws, "fine.merge", cat / cfg.merge_k, cat, 1, rng);
        add_conv_params(ws, "fine.final", 3, cat / cfg.merge_k, 3, rng);
    }
    return ws;
}

/// Descending dense blocks with recorded pooling indices, then ascending
/// region-aware blocks whose unpooled output is fused with the matching
/// local feature map (1x1 adapters reconcile channel widths); a final 3x3
/// convolution emits the signed 3-channel mask.
template <typename T>
CoarseOutputs<T> coarse_forward(Graph<T>& g, const Tensor<T>& x, const GraNetConfig& cfg,
                                WeightStore<T>& ws) {
    constexpr int N = GraNetConfig::kNumLevels;
    if (x.shape.h % GraNetConfig::kPadMultiple != 0 || x.shape.w % GraNetConfig::kPadMultiple != 0)
        throw ShapeError("coarse_forward: spatial dims " + std::to_string(x.shape.h) + "x" +
                         std::to_string(x.shape.w) + " must be divisible by " +
                         std::to_string(GraNetConfig::kPadMultiple) + "; pad the input first");

    CoarseOutputs<T> out;
    std::array<Tensor<T>, N> local;
    Tensor<T> cur = x;
    for (int i = 0; i < N; ++i) {
        local[static_cast<std::size_t>(i)] =
            dense_block(g, cur, cfg.coarse_dense_cfg(i), ws, "coarse.enc" + std::to_string(i));
        auto [pooled, idx] = g.maxpool2d(local[static_cast<std::size_t>(i)]);
        out.pool_indices[static_cast<std::size_t>(i)] = std::move(idx);
        cur = pooled;
    }

    Tensor<T> global = cur;
    for (int j = 1; j <= N; ++j) {
        const int i = cfg.ra_level(j);
        Tensor<T> feat = cfg.use_ra
                             ? ra_block(g, global, cfg.ra_cfg(j), ws, "coarse.ra" + std::to_string(j))
                             : global;
        if (cfg.needs_adapter(j)) feat = conv(g, feat, ws, "coarse.adapt" + std::to_string(j));
        const Tensor<T>& skip = local[static_cast<std::size_t>(i)];
        Tensor<T> up = g.maxunpool2d(feat, out.pool_indices[static_cast<std::size_t>(i)],
                                     skip.shape.h, skip.shape.w);
        global = g.add(up, skip);
    }
    out.mask = conv(g, global, ws, "coarse.mask");
    return out;
}

/// Stem conv, a stack of dense blocks whose outputs are all concatenated
/// (skip connections), the merging block, and a 3x3 head producing a
/// 3-channel correction added to the coarse result.
template <typename T>
Tensor<T> fine_forward(Graph<T>& g, const Tensor<T>& coarse, const GraNetConfig& cfg,
                       WeightStore<T>& ws) {
    Tensor<T> cur = g.relu(conv(g, coarse, ws, "fine.stem"));
    std::vector<Tensor<T>> outs;
    outs.reserve(static_cast<std::size_t>(cfg.fine_num_dense_blocks));
    for (int b = 0; b < cfg.fine_num_dense_blocks; ++b) {
        cur = dense_block(g, cur,
                          {cfg.fine_channels, cfg.dense_growth, cfg.dense_layers, cfg.fine_channels},
                          ws, "fine.block" + std::to_string(b));
        outs.push_back(cur);
    }
    Tensor<T> cat = outs.size() == 1 ? outs[0] : g.concat_channels(outs);
    Tensor<T> merged = cfg.use_merge ? merging_block(g, cat, cfg.merge_k)
                                     : conv(g, cat, ws, "fine.merge");
    Tensor<T> corr = conv(g, merged, ws, "fine.final");
    return cfg.fine_residual ? g.add(coarse, corr) : corr;
}

struct CropRecord {
    int h = 0;
    int w = 0;
};

/// Reflect-pad right/bottom to the next multiple of m; the record allows the
/// exact inverse crop.
template <typename T>
std::pair<Tensor<T>, CropRecord> pad_to_multiple(Graph<T>& g, const Tensor<T>& x,
                                                 int m = GraNetConfig::kPadMultiple) {
    const CropRecord rec{x.shape.h, x.shape.w};
    const int th = (x.shape.h + m - 1) / m * m;
    const int tw = (x.shape.w + m - 1) / m * m;
    if (th == x.shape.h && tw == x.shape.w) return {x, rec};
    return {g.reflect_pad_rb(x, th, tw), rec};
}

template <typename T>
Tensor<T> crop_to(Graph<T>& g, const Tensor<T>& x, CropRecord rec) {
    if (x.shape.h == rec.h && x.shape.w == rec.w) return x;
    return g.crop_tl(x, rec.h, rec.w);
}

template <typename T>
ForwardOutputs<T> granet_forward(Graph<T>& g, const Tensor<T>& input, const GraNetConfig& cfg,
                                 WeightStore<T>& ws) {
    if (input.shape.c != 3)
        throw ShapeError("granet_forward: expected a 3-channel image tensor, got " +
                         input.shape.str());
    auto [padded, rec] = pad_to_multiple(g, input);
    CoarseOutputs<T> coarse = coarse_forward(g, padded, cfg, ws);
    Tensor<T> coarse_result = g.sub(padded, coarse.mask);
    Tensor<T> fine = cfg.use_fine ? fine_forward(g, coarse_result, cfg, ws) : coarse_result;
    ForwardOutputs<T> out;
    out.mask = crop_to(g, coarse.mask, rec);
    out.coarse = crop_to(g, coarse_result, rec);
    out.final_out = crop_to(g, fine, rec);
    return out;
}

/// Eq-style mean absolute error: mean over batch, channels and pixels; the
/// subgradient at zero difference is zero.
template <typename T>
Tensor<T> mae_loss(Graph<T>& g, const Tensor<T>& pred, const Tensor<T>& target) {
    return g.mean_all(g.abs_val(g.sub(pred, target)));
}

} // namespace granet
