#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "granet/blocks.hpp"
#include "granet/optim.hpp"

namespace granet {

/// Serialized training state. Little-endian container:
///   magic "GRNT", u32 version, then four length-prefixed sections
///   (config, weights, optimizer, trainer state) and a trailing FNV-64
///   checksum of everything before it. Weight records are
///   (name, rank=4, dims, raw f32 data).
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string fingerprint; // model-section config hash
    std::string config_text; // full resolved config, for reconstruction

    std::map<std::string, Tensor<float>> weights;

    // optimizer
    double adam_lr = 5e-4, adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t adam_step = 0;
    std::map<std::string, Adam<float>::ParamState> adam_state;

    PlateauScheduler sched;

    std::uint32_t epoch = 0;
    std::string rng_state; // mt19937 stream serialization
};

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }

    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(const char* p, std::size_t n) : p_(p), end_(p + n) {}

    void raw(void* out, std::size_t n) {
        if (static_cast<std::size_t>(end_ - p_) < n)
            throw IoError("checkpoint truncated: section shorter than its declared length");
        std::memcpy(out, p_, n);
        p_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (static_cast<std::size_t>(end_ - p_) < n)
            throw IoError("checkpoint truncated inside a string field");
        std::string s(p_, p_ + n);
        p_ += n;
        return s;
    }
    std::vector<float> floats(std::size_t count) {
        std::vector<float> v(count);
        raw(v.data(), count * sizeof(float));
        return v;
    }
    bool exhausted() const { return p_ == end_; }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

private:
    const char* p_;
    const char* end_;
};

} // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    using detail::ByteWriter;
    ByteWriter out;
    out.raw("GRNT", 4);
    out.u32(Checkpoint::kVersion);

    auto section = [&out](const ByteWriter& w) {
        out.u64(static_cast<std::uint64_t>(w.bytes().size()));
        out.raw(w.bytes().data(), w.bytes().size());
    };

    ByteWriter cfg;
    cfg.str(ck.fingerprint);
    cfg.str(ck.config_text);
    section(cfg);

    ByteWriter wts;
    wts.u32(static_cast<std::uint32_t>(ck.weights.size()));
    for (const auto& [name, t] : ck.weights) {
        wts.str(name);
        wts.u32(4);
        wts.u32(static_cast<std::uint32_t>(t.shape.n));
        wts.u32(static_cast<std::uint32_t>(t.shape.c));
        wts.u32(static_cast<std::uint32_t>(t.shape.h));
        wts.u32(static_cast<std::uint32_t>(t.shape.w));
        wts.floats(*t.data);
    }
    section(wts);

    ByteWriter opt;
    opt.f64(ck.adam_lr);
    opt.f64(ck.adam_beta1);
    opt.f64(ck.adam_beta2);
    opt.f64(ck.adam_eps);
    opt.u64(ck.adam_step);
    opt.u32(static_cast<std::uint32_t>(ck.adam_state.size()));
    for (const auto& [name, st] : ck.adam_state) {
        opt.str(name);
        opt.u64(st.m.size());
        opt.floats(st.m);
        opt.floats(st.v);
    }
    section(opt);

    ByteWriter st;
    st.f64(ck.sched.lr);
    st.f64(ck.sched.best_metric);
    st.f64(ck.sched.factor);
    st.f64(ck.sched.min_lr);
    st.u32(static_cast<std::uint32_t>(ck.sched.epochs_since_improve));
    st.u32(static_cast<std::uint32_t>(ck.sched.patience));
    st.u32(ck.epoch);
    st.str(ck.rng_state);
    section(st);

    const std::uint64_t checksum = fnv1a(out.bytes().data(), out.bytes().size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + path + "'");
    f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
    f.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!f) throw IoError("short write while saving checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw IoError("checkpoint '" + path + "' is truncated");

    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, bytes.data() + bytes.size() - 8, 8);
    if (fnv1a(bytes.data(), bytes.size() - 8) != stored_sum)
        throw IoError("checkpoint '" + path + "' is corrupt (checksum mismatch)");

    detail::ByteReader in(bytes.data(), bytes.size() - 8);
    char magic[4];
    in.raw(magic, 4);
    if (std::memcmp(magic, "GRNT", 4) != 0)
        throw IoError("'" + path + "' is not a checkpoint (bad magic)");
    const std::uint32_t version = in.u32();
    if (version != Checkpoint::kVersion)
        throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");

    auto read_section = [&in, &path]() {
        const std::uint64_t len = in.u64();
        if (len > in.remaining())
            throw IoError("checkpoint '" + path + "' is corrupt (section overruns file)");
        return len;
    };

    Checkpoint ck;
    {
        const std::uint64_t len = read_section();
        std::vector<char> sec_bytes(len);
        in.raw(sec_bytes.data(), len);
        detail::ByteReader sec(sec_bytes.data(), len);
        ck.fingerprint = sec.str();
        ck.config_text = sec.str();
        if (!sec.exhausted())
            throw IoError("checkpoint '" + path + "' config section has trailing bytes");
    }
    {
        const std::uint64_t len = read_section();
        std::vector<char> sec_bytes(len);
        in.raw(sec_bytes.data(), len);
        detail::ByteReader sec(sec_bytes.data(), len);
        const std::uint32_t count = sec.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::string name = sec.str();
            const std::uint32_t rank = sec.u32();
            if (rank != 4)
                throw IoError("checkpoint weight '" + name + "' has rank " + std::to_string(rank));
            Shape s;
            s.n = static_cast<int>(sec.u32());
            s.c = static_cast<int>(sec.u32());
            s.h = static_cast<int>(sec.u32());
            s.w = static_cast<int>(sec.u32());
            if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 ||
                static_cast<std::uint64_t>(s.numel()) * 4 > len)
                throw IoError("checkpoint weight '" + name + "' has implausible shape " + s.str());
            Tensor<float> t = make_leaf<float>(s, true);
            sec.raw(t.data->data(), static_cast<std::size_t>(s.numel()) * 4);
            ck.weights.emplace(name, std::move(t));
        }
        if (!sec.exhausted())
            throw IoError("checkpoint '" + path + "' weight section has trailing bytes");
    }
    {
        const std::uint64_t len = read_section();
        std::vector<char> sec_bytes(len);
        in.raw(sec_bytes.data(), len);
        detail::ByteReader sec(sec_bytes.data(), len);
        ck.adam_lr = sec.f64();
        ck.adam_beta1 = sec.f64();
        ck.adam_beta2 = sec.f64();
        ck.adam_eps = sec.f64();
        ck.adam_step = sec.u64();
        const std::uint32_t count = sec.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::string name = sec.str();
            const std::uint64_t numel = sec.u64();
            if (numel * 8 > len) throw IoError("checkpoint optimizer record '" + name + "' overruns section");
            Adam<float>::ParamState st;
            st.m = sec.floats(numel);
            st.v = sec.floats(numel);
            ck.adam_state.emplace(name, std::move(st));
        }
        if (!sec.exhausted())
            throw IoError("checkpoint '" + path + "' optimizer section has trailing bytes");
    }
    {
        const std::uint64_t len = read_section();
        std::vector<char> sec_bytes(len);
        in.raw(sec_bytes.data(), len);
        detail::ByteReader sec(sec_bytes.data(), len);
        ck.sched.lr = sec.f64();
        ck.sched.best_metric = sec.f64();
        ck.sched.factor = sec.f64();
        ck.sched.min_lr = sec.f64();
        ck.sched.epochs_since_improve = static_cast<int>(sec.u32());
        ck.sched.patience = static_cast<int>(sec.u32());
        ck.epoch = sec.u32();
        ck.rng_state = sec.str();
        if (!sec.exhausted())
            throw IoError("checkpoint '" + path + "' state section has trailing bytes");
    }
    if (!in.exhausted()) throw IoError("checkpoint '" + path + "' has trailing bytes");
    return ck;
}

} // namespace granet
