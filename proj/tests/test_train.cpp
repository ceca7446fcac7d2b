#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "granet/rain.hpp"
#include "granet/train.hpp"
#include "support/fixtures.hpp"

using namespace granet;

namespace {

GraNetConfig tiny_config() {
    GraNetConfig cfg;
    cfg.coarse_channels = {4, 6, 8};
    cfg.dense_layers = 1;
    cfg.dense_growth = 3;
    cfg.fine_channels = 4;
    cfg.fine_num_dense_blocks = 2;
    cfg.merge_k = 2;
    return cfg;
}

std::vector<LoadedPair> synthetic_pairs(int count, int hw, std::uint32_t seed) {
    RainSettings rain;
    rain.streaks_min = 6;
    rain.streaks_max = 14;
    rain.length_min = 5;
    rain.length_max = 14;
    rain.mist_strength = 0.0;
    std::vector<LoadedPair> pairs;
    for (int i = 0; i < count; ++i) {
        std::mt19937 rng(seed + static_cast<std::uint32_t>(i));
        LoadedPair p;
        p.id = "s" + std::to_string(i);
        p.clean = fixtures::make_clean_image(hw, hw, rng);
        p.rainy = synth_rain(p.clean, rain, rng).rainy;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

ResolvedConfig wrap(const GraNetConfig& m, const TrainSettings& t) {
    ResolvedConfig rc;
    rc.model = m;
    rc.train = t;
    return rc;
}

} // namespace

TEST_CASE("training a single pair drives the smoothed loss down", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    TrainSettings tcfg;
    tcfg.seed = 5;
    tcfg.max_epochs = 150;
    tcfg.max_steps = 150;
    tcfg.augment = false;
    const auto pairs = synthetic_pairs(1, 32, 100);
    TrainResult res = train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs);

    REQUIRE(res.step_losses.size() >= 100);
    const auto mean_of = [&](std::size_t b, std::size_t e) {
        double s = 0;
        for (std::size_t i = b; i < e; ++i) s += res.step_losses[i];
        return s / static_cast<double>(e - b);
    };
    const double first = mean_of(0, 50);
    const double last = mean_of(res.step_losses.size() - 50, res.step_losses.size());
    CHECK(last < 0.5 * first);
    // smoothed curve is monotone apart from small noise
    double prev = first;
    for (std::size_t w = 50; w + 50 <= res.step_losses.size(); w += 50) {
        const double cur = mean_of(w, w + 50);
        CHECK(cur < prev * 1.10);
        prev = cur;
    }
}

TEST_CASE("fixed seeds reproduce the loss curve exactly", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    TrainSettings tcfg;
    tcfg.seed = 11;
    tcfg.max_epochs = 4;
    const auto pairs = synthetic_pairs(3, 24, 200);
    TrainResult a = train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs);
    TrainResult b = train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs);
    REQUIRE(a.step_losses.size() == b.step_losses.size());
    for (std::size_t i = 0; i < a.step_losses.size(); ++i)
        REQUIRE(a.step_losses[i] == Catch::Approx(b.step_losses[i]).margin(1e-6));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].val_psnr_final == Catch::Approx(b.history[i].val_psnr_final));
}

TEST_CASE("resume from a checkpoint reproduces the next step", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    const auto pairs = synthetic_pairs(2, 24, 300);

    TrainSettings full;
    full.seed = 21;
    full.max_epochs = 3;
    TrainResult ref = train(mcfg, full, wrap(mcfg, full), pairs, pairs);

    TrainSettings part = full;
    part.max_epochs = 2;
    TrainResult two = train(mcfg, part, wrap(mcfg, part), pairs, pairs);

    const std::string path =
        (std::filesystem::path(GRANET_TEST_TMP) / "resume.ckpt").string();
    std::filesystem::create_directories(GRANET_TEST_TMP);
    save_checkpoint(two.final_checkpoint, path);
    const Checkpoint loaded = load_checkpoint(path);

    TrainResult cont = train(mcfg, full, wrap(mcfg, full), pairs, pairs, &loaded);
    REQUIRE(cont.history.size() == 1);
    CHECK(cont.history[0].epoch == 3); // numbering continues
    const std::size_t base = two.step_losses.size();
    REQUIRE(cont.step_losses.size() == ref.step_losses.size() - base);
    for (std::size_t i = 0; i < cont.step_losses.size(); ++i)
        CHECK(cont.step_losses[i] == Catch::Approx(ref.step_losses[base + i]).margin(1e-5));
}

TEST_CASE("resume refuses a mismatched model config", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    const auto pairs = synthetic_pairs(1, 24, 400);
    TrainSettings tcfg;
    tcfg.seed = 31;
    tcfg.max_epochs = 1;
    TrainResult res = train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs);

    GraNetConfig other = mcfg;
    other.fine_channels = 8;
    REQUIRE_THROWS_AS(train(other, tcfg, wrap(other, tcfg), pairs, pairs, &res.final_checkpoint),
                      ConfigError);
}

TEST_CASE("learning rate stays on a bounded non-increasing trajectory", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    TrainSettings tcfg;
    tcfg.seed = 41;
    tcfg.max_epochs = 12;
    tcfg.patience = 0; // aggressive decay to reach the floor quickly
    const auto pairs = synthetic_pairs(1, 16, 500);
    TrainResult res = train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs);

    double prev = tcfg.lr;
    for (const auto& st : res.history) {
        CHECK(st.lr <= prev + 1e-15);
        CHECK(st.lr >= tcfg.min_lr - 1e-15);
        prev = st.lr;
    }
}

TEST_CASE("metrics CSV carries the contracted columns", "[train]") {
    const GraNetConfig mcfg = tiny_config();
    TrainSettings tcfg;
    tcfg.seed = 51;
    tcfg.max_epochs = 2;
    const auto pairs = synthetic_pairs(1, 16, 600);
    const std::string csv =
        (std::filesystem::path(GRANET_TEST_TMP) / "metrics.csv").string();
    std::filesystem::create_directories(GRANET_TEST_TMP);
    train(mcfg, tcfg, wrap(mcfg, tcfg), pairs, pairs, nullptr, nullptr, csv);

    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == std::string(kMetricsCsvHeader));
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}
