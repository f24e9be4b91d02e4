#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace daobs {

/// Incremental 64-bit FNV-1a.
class Fnv1a64 {
public:
    void update(std::span<const std::byte> bytes);
    void update(std::string_view text);
    template <typename T>
    void update_values(std::span<const T> values) {
        update(std::as_bytes(values));
    }
    [[nodiscard]] std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

/// Hash of a file's bytes, or of every regular file below a directory (sorted by relative path).
std::uint64_t hash_path(const std::filesystem::path& path);

}  // namespace daobs
