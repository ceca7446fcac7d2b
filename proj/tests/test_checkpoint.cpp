#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "granet/checkpoint.hpp"
#include "granet/train.hpp"
#include "support/fixtures.hpp"

using namespace granet;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path p = fs::path(GRANET_TEST_TMP) / "checkpoint";
    fs::create_directories(p);
    return p;
}

Checkpoint sample_checkpoint() {
    std::mt19937 rng(71);
    Checkpoint ck;
    ck.fingerprint = "deadbeefdeadbeef";
    ck.config_text = "model.fine_channels = 64\n";
    ck.weights.emplace("a.w", fixtures::rand_tensor<float>({2, 3, 3, 3}, rng));
    ck.weights.emplace("a.b", fixtures::rand_tensor<float>({1, 2, 1, 1}, rng));
    Adam<float>::ParamState st;
    st.m = {0.1f, 0.2f};
    st.v = {0.3f, 0.4f};
    ck.adam_state.emplace("a.b", st);
    ck.adam_step = 17;
    ck.sched.lr = 4.5e-4;
    ck.sched.best_metric = 31.25;
    ck.sched.epochs_since_improve = 2;
    ck.epoch = 5;
    std::mt19937 rngstate(123);
    rngstate.discard(10);
    ck.rng_state = detail::serialize_rng(rngstate);
    return ck;
}

} // namespace

TEST_CASE("checkpoint round trip is bit-exact", "[checkpoint]") {
    const Checkpoint ck = sample_checkpoint();
    const std::string path = (tmp_dir() / "roundtrip.ckpt").string();
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);

    CHECK(back.fingerprint == ck.fingerprint);
    CHECK(back.config_text == ck.config_text);
    REQUIRE(back.weights.size() == ck.weights.size());
    for (const auto& [name, t] : ck.weights) {
        REQUIRE(back.weights.count(name) == 1);
        CHECK(back.weights.at(name).shape == t.shape);
        CHECK(*back.weights.at(name).data == *t.data);
    }
    CHECK(back.adam_step == 17);
    REQUIRE(back.adam_state.count("a.b") == 1);
    CHECK(back.adam_state.at("a.b").m == ck.adam_state.at("a.b").m);
    CHECK(back.adam_state.at("a.b").v == ck.adam_state.at("a.b").v);
    CHECK(back.sched.lr == ck.sched.lr);
    CHECK(back.sched.best_metric == ck.sched.best_metric);
    CHECK(back.sched.epochs_since_improve == 2);
    CHECK(back.epoch == 5);
    CHECK(back.rng_state == ck.rng_state);

    // the serialized rng stream restores an identical generator
    std::mt19937 expect(123);
    expect.discard(10);
    std::mt19937 got = detail::deserialize_rng(back.rng_state);
    for (int i = 0; i < 16; ++i) REQUIRE(got() == expect());
}

TEST_CASE("any corrupted byte is detected", "[checkpoint]") {
    const Checkpoint ck = sample_checkpoint();
    const std::string path = (tmp_dir() / "corrupt.ckpt").string();
    save_checkpoint(ck, path);

    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    std::mt19937 rng(72);
    std::uniform_int_distribution<std::size_t> pos(0, bytes.size() - 1);
    for (int rep = 0; rep < 24; ++rep) {
        std::vector<char> mutated = bytes;
        const std::size_t at = pos(rng);
        mutated[at] = static_cast<char>(mutated[at] ^ 0x5a);
        const std::string bad = (tmp_dir() / "corrupt_mut.ckpt").string();
        std::ofstream out(bad, std::ios::binary | std::ios::trunc);
        out.write(mutated.data(), static_cast<std::streamsize>(mutated.size()));
        out.close();
        REQUIRE_THROWS_AS(load_checkpoint(bad), IoError);
    }
}

TEST_CASE("section length checks catch forged containers", "[checkpoint]") {
    // corrupt a section length but recompute the checksum, so only the
    // per-section bounds checks can catch it
    const Checkpoint ck = sample_checkpoint();
    const std::string path = (tmp_dir() / "forged.ckpt").string();
    save_checkpoint(ck, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    // first section length lives right after magic+version
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + 8, 8);
    len += 1 << 20;
    std::memcpy(bytes.data() + 8, &len, 8);
    const std::uint64_t checksum = fnv1a(bytes.data(), bytes.size() - 8);
    std::memcpy(bytes.data() + bytes.size() - 8, &checksum, 8);

    const std::string forged = (tmp_dir() / "forged_mut.ckpt").string();
    std::ofstream out(forged, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    REQUIRE_THROWS_WITH(load_checkpoint(forged), Catch::Matchers::ContainsSubstring("section"));
}

TEST_CASE("truncated and non-checkpoint files are rejected", "[checkpoint]") {
    const Checkpoint ck = sample_checkpoint();
    const std::string path = (tmp_dir() / "trunc.ckpt").string();
    save_checkpoint(ck, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const std::string cut = (tmp_dir() / "cut.ckpt").string();
    std::ofstream out(cut, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    REQUIRE_THROWS_AS(load_checkpoint(cut), IoError);

    const std::string junk = (tmp_dir() / "junk.ckpt").string();
    std::ofstream jf(junk, std::ios::binary | std::ios::trunc);
    jf << "PNG!not a checkpoint at all, but long enough to pass size checks";
    jf.close();
    REQUIRE_THROWS_AS(load_checkpoint(junk), IoError);

    REQUIRE_THROWS_AS(load_checkpoint((tmp_dir() / "missing.ckpt").string()), IoError);
}

TEST_CASE("restoring into a different config is refused", "[checkpoint]") {
    GraNetConfig small;
    small.coarse_channels = {4, 6, 8};
    small.dense_layers = 1;
    small.dense_growth = 2;
    small.fine_channels = 4;
    small.fine_num_dense_blocks = 2;
    small.merge_k = 2;

    Checkpoint ck;
    ck.fingerprint = config_fingerprint(small);
    WeightStore<float> ws = init_granet_weights<float>(small, 3);
    for (const auto& [name, t] : ws) ck.weights.emplace(name, clone(t));

    GraNetConfig other = small;
    other.fine_channels = 8;
    REQUIRE_THROWS_AS(restore_weights(other, ck), ConfigError);

    WeightStore<float> ok = restore_weights(small, ck);
    CHECK(*ok.at("fine.stem.w").data == *ws.at("fine.stem.w").data);
}
