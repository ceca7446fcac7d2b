#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace granet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor/operand dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Bad key, value, or combination in a parsed configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written, or decoded.
class IoError : public Error {
public:
    using Error::Error;
};

/// (n, c, h, w) extent of a dense 4-D tensor, row-major in that order.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape&) const = default;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }

    std::int64_t at(int ni, int ci, int hi, int wi) const {
        return ((static_cast<std::int64_t>(ni) * c + ci) * h + hi) * w + wi;
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// FNV-1a, used for config fingerprints, checkpoint checksums and replay hashing.
inline std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

} // namespace granet
