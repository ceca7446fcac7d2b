#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "granet/checkpoint.hpp"
#include "granet/config.hpp"
#include "granet/dataset.hpp"
#include "granet/metrics.hpp"
#include "granet/model.hpp"
#include "granet/optim.hpp"

namespace granet {

struct EpochStats {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_psnr = 0; // not part of the CSV contract
    double val_psnr_final = 0;
    double val_psnr_coarse = 0;
    double val_psnr_mask = 0;
    double val_ssim_final = 0;
    long long steps_done = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_psnr = -std::numeric_limits<double>::infinity();
    Checkpoint best_checkpoint;  // state right after the best validation epoch
    Checkpoint final_checkpoint; // state at the last completed epoch
    std::vector<float> step_losses;
};

/// With probability 1/2, flip both images of the pair horizontally.
inline void augment(LoadedPair& pair, std::mt19937& rng) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        flip_horizontal(pair.rainy);
        flip_horizontal(pair.clean);
    }
}

namespace detail {

inline std::string serialize_rng(const std::mt19937& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

inline std::mt19937 deserialize_rng(const std::string& state) {
    std::mt19937 rng;
    std::istringstream ss(state);
    ss >> rng;
    if (!ss) throw IoError("checkpoint rng state is malformed");
    return rng;
}

inline Checkpoint snapshot(const GraNetConfig& mcfg, const ResolvedConfig& rc,
                           const WeightStore<float>& ws, const Adam<float>& adam,
                           const PlateauScheduler& sched, int epoch, const std::mt19937& rng) {
    Checkpoint ck;
    ck.fingerprint = config_fingerprint(mcfg);
    ck.config_text = resolved_config_text(rc);
    for (const auto& [name, t] : ws) ck.weights.emplace(name, clone(t));
    ck.adam_lr = static_cast<double>(adam.lr());
    ck.adam_beta1 = static_cast<double>(adam.beta1());
    ck.adam_beta2 = static_cast<double>(adam.beta2());
    ck.adam_eps = static_cast<double>(adam.eps());
    ck.adam_step = adam.step_count();
    ck.adam_state = adam.state();
    ck.sched = sched;
    ck.epoch = static_cast<std::uint32_t>(epoch);
    ck.rng_state = serialize_rng(rng);
    return ck;
}

/// Mean over finite entries; +inf sentinels (identical images) are excluded.
inline double mean_excluding_inf(const std::vector<double>& v) {
    double sum = 0;
    int n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            sum += x;
            ++n;
        }
    if (n == 0) return std::numeric_limits<double>::infinity();
    return sum / n;
}

} // namespace detail

struct ValMetrics {
    double psnr_final = 0, psnr_coarse = 0, psnr_mask = 0, ssim_final = 0;
};

/// Instrumented validation pass: PSNR of the final and coarse outputs
/// against clean, PSNR of the predicted mask against the true residual
/// (rainy - clean), SSIM of the final output.
inline ValMetrics evaluate(const GraNetConfig& mcfg, WeightStore<float>& ws,
                           const std::vector<LoadedPair>& val_set) {
    std::vector<double> pf, pc, pm, sf;
    for (const auto& pair : val_set) {
        Graph<float> g(false);
        Tensor<float> input = to_tensor(pair.rainy);
        ForwardOutputs<float> out = granet_forward(g, input, mcfg, ws);
        const LumaPlane clean_y = rgb_to_luminance(pair.clean);
        const LumaPlane final_y = rgb_to_luminance(from_tensor(out.final_out));
        const LumaPlane coarse_y = rgb_to_luminance(from_tensor(out.coarse));
        ImageF32 residual = pair.rainy;
        for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] -= pair.clean.data[i];
        pf.push_back(psnr(final_y, clean_y));
        pc.push_back(psnr(coarse_y, clean_y));
        pm.push_back(psnr(rgb_to_luminance(from_tensor(out.mask)), rgb_to_luminance(residual)));
        if (pair.clean.h >= 11 && pair.clean.w >= 11) sf.push_back(ssim(final_y, clean_y));
    }
    ValMetrics m;
    m.psnr_final = detail::mean_excluding_inf(pf);
    m.psnr_coarse = detail::mean_excluding_inf(pc);
    m.psnr_mask = detail::mean_excluding_inf(pm);
    m.ssim_final = sf.empty() ? 0.0 : detail::mean_excluding_inf(sf);
    return m;
}

inline const char* kMetricsCsvHeader =
    "epoch,lr,train_loss,val_psnr_final,val_psnr_coarse,val_psnr_mask,val_ssim_final";

/// Rebuild a weight store for `cfg` from checkpoint contents, validating the
/// fingerprint and every parameter's presence and shape.
inline WeightStore<float> restore_weights(const GraNetConfig& cfg, const Checkpoint& ck) {
    if (ck.fingerprint != config_fingerprint(cfg))
        throw ConfigError("checkpoint fingerprint " + ck.fingerprint +
                          " does not match the requested model config " + config_fingerprint(cfg));
    WeightStore<float> ws = init_granet_weights<float>(cfg, 0);
    for (auto& [name, t] : ws) {
        auto it = ck.weights.find(name);
        if (it == ck.weights.end()) throw Error("checkpoint is missing parameter '" + name + "'");
        if (!(it->second.shape == t.shape))
            throw Error("checkpoint parameter '" + name + "' has shape " + it->second.shape.str() +
                        ", expected " + t.shape.str());
        std::copy(it->second.data->begin(), it->second.data->end(), t.data->begin());
    }
    return ws;
}

/// One-worker training loop: batch-1 Adam steps on the MAE loss with paired
/// horizontal-flip augmentation, per-epoch validation, plateau scheduling on
/// validation PSNR. Stops at max_epochs/max_steps, when `stop_early` returns
/// true, or once the rate sits at its floor and the best validation PSNR has
/// not improved for stop_patience epochs. Deterministic for a fixed seed.
inline TrainResult train(const GraNetConfig& mcfg, const TrainSettings& tcfg,
                         const ResolvedConfig& full_config,
                         const std::vector<LoadedPair>& train_set,
                         const std::vector<LoadedPair>& val_set,
                         const Checkpoint* resume = nullptr, std::ostream* log = nullptr,
                         const std::string& csv_path = "",
                         const std::function<bool(const EpochStats&)>& stop_early = nullptr) {
    if (train_set.empty()) throw Error("train: empty training set");
    if (val_set.empty()) throw Error("train: empty validation set");
    mcfg.validate();

    WeightStore<float> ws = init_granet_weights<float>(mcfg, tcfg.seed);
    Adam<float> adam(static_cast<float>(tcfg.lr));
    PlateauScheduler sched{tcfg.lr, tcfg.factor, tcfg.min_lr, tcfg.patience};
    std::mt19937 rng(tcfg.seed + 0x9e37u);
    int start_epoch = 0;

    if (resume) {
        if (resume->fingerprint != config_fingerprint(mcfg))
            throw ConfigError("checkpoint fingerprint " + resume->fingerprint +
                              " does not match the requested model config " +
                              config_fingerprint(mcfg));
        for (auto& [name, t] : ws) {
            auto it = resume->weights.find(name);
            if (it == resume->weights.end())
                throw Error("checkpoint is missing parameter '" + name + "'");
            if (!(it->second.shape == t.shape))
                throw Error("checkpoint parameter '" + name + "' has shape " +
                            it->second.shape.str() + ", expected " + t.shape.str());
            std::copy(it->second.data->begin(), it->second.data->end(), t.data->begin());
        }
        adam = Adam<float>(static_cast<float>(resume->adam_lr), static_cast<float>(resume->adam_beta1),
                           static_cast<float>(resume->adam_beta2), static_cast<float>(resume->adam_eps));
        adam.set_step_count(resume->adam_step);
        adam.state() = resume->adam_state;
        sched = resume->sched;
        rng = detail::deserialize_rng(resume->rng_state);
        start_epoch = static_cast<int>(resume->epoch);
    }

    std::ofstream csv;
    if (!csv_path.empty()) {
        const bool fresh = !resume;
        csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw IoError("cannot write metrics CSV '" + csv_path + "'");
        if (fresh) csv << kMetricsCsvHeader << "\n";
    }

    TrainResult result;
    long long steps = resume ? static_cast<long long>(resume->adam_step) : 0;
    int epochs_since_best = 0;
    int last_epoch = start_epoch;
    bool stop = false;

    for (int epoch = start_epoch; epoch < tcfg.max_epochs && !stop; ++epoch) {
        double loss_sum = 0;
        std::vector<double> train_psnrs;
        long long epoch_steps = 0;
        for (const auto& pair : train_set) {
            LoadedPair sample = pair;
            if (tcfg.augment) augment(sample, rng);

            Graph<float> g(true);
            Tensor<float> input = to_tensor(sample.rainy);
            Tensor<float> target = to_tensor(sample.clean);
            ForwardOutputs<float> out = granet_forward(g, input, mcfg, ws);
            Tensor<float> loss = mae_loss(g, out.final_out, target);
            const float loss_v = (*loss.data)[0];
            if (!std::isfinite(loss_v))
                throw Error("non-finite loss at step " + std::to_string(steps + 1) + " on image '" +
                            sample.id + "'");
            g.backward(loss);
            adam.set_lr(static_cast<float>(sched.lr));
            adam.step(ws);
            ws.zero_grads();

            loss_sum += loss_v;
            result.step_losses.push_back(loss_v);
            train_psnrs.push_back(
                psnr(rgb_to_luminance(from_tensor(out.final_out)), rgb_to_luminance(sample.clean)));
            ++steps;
            ++epoch_steps;
            if (tcfg.max_steps > 0 && steps >= tcfg.max_steps) {
                stop = true;
                break;
            }
        }

        const ValMetrics vm = evaluate(mcfg, ws, val_set);
        EpochStats st;
        st.epoch = epoch + 1;
        st.lr = sched.lr;
        st.train_loss = loss_sum / static_cast<double>(epoch_steps);
        st.train_psnr = detail::mean_excluding_inf(train_psnrs);
        st.val_psnr_final = vm.psnr_final;
        st.val_psnr_coarse = vm.psnr_coarse;
        st.val_psnr_mask = vm.psnr_mask;
        st.val_ssim_final = vm.ssim_final;
        st.steps_done = steps;
        result.history.push_back(st);

        if (log)
            *log << "epoch " << st.epoch << " lr " << st.lr << " loss " << st.train_loss
                 << " val_psnr " << st.val_psnr_final << " (coarse " << st.val_psnr_coarse
                 << ", mask " << st.val_psnr_mask << ") val_ssim " << st.val_ssim_final << "\n";
        if (csv.is_open()) {
            csv << st.epoch << "," << st.lr << "," << st.train_loss << "," << st.val_psnr_final << ","
                << st.val_psnr_coarse << "," << st.val_psnr_mask << "," << st.val_ssim_final << "\n";
            csv.flush();
        }

        const bool improved = st.val_psnr_final > result.best_val_psnr;
        if (improved) {
            result.best_val_psnr = st.val_psnr_final;
            result.best_epoch = st.epoch;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }

        const double lr_after = sched.step(st.val_psnr_final);
        adam.set_lr(static_cast<float>(lr_after));

        if (improved)
            result.best_checkpoint =
                detail::snapshot(mcfg, full_config, ws, adam, sched, st.epoch, rng);

        if (stop_early && stop_early(st)) stop = true;
        if (sched.at_floor() && epochs_since_best >= tcfg.stop_patience) stop = true;
        last_epoch = st.epoch;
    }
    result.final_checkpoint = detail::snapshot(mcfg, full_config, ws, adam, sched, last_epoch, rng);
    if (result.best_epoch < 0) result.best_checkpoint = result.final_checkpoint;
    return result;
}

} // namespace granet
