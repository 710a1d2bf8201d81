#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace idsbal {

// Error hierarchy shared by all modules. Exit-code mapping lives in the CLI.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// One global seed fans out to per-component streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component) {
    return master ^ fnv1a64(component);
}

inline std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

}  // namespace idsbal
