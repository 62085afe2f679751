#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace msse {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/extent mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (kernel extents, rates, fold counts, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input file; message carries a byte offset or line number.
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// NaN/Inf encountered where a finite value is required.
struct NumericError : Error {
    using Error::Error;
};

// Label/corpus problems: unknown class ids, empty evaluations, stale caches.
struct DataError : Error {
    using Error::Error;
};

inline std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// FNV-1a, used for content fingerprints (not cryptographic).
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

}  // namespace msse
