#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace gpa {

inline constexpr std::string_view kVersion = "gpa-0.1.0";

// FNV-1a, 64-bit. Used for config/artifact fingerprints; stable across
// platforms, unlike std::hash.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(std::uint64_t v);

// Number of worker threads; honours the GPA_THREADS environment variable.
int worker_threads();

// Runs fn(i) for i in [0, n). Work items must be independent; results
// are expected to land in preallocated slots so the outcome does not
// depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

} // namespace gpa
