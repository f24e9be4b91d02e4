#include "daobs/hashing.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <vector>

#include "daobs/errors.hpp"

namespace daobs {

void Fnv1a64::update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
        state_ ^= static_cast<std::uint64_t>(b);
        state_ *= 0x100000001b3ULL;
    }
}

void Fnv1a64::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

std::string to_hex(std::uint64_t value) {
    std::array<char, 17> buf{};
    std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(value));
    return buf.data();
}

namespace {

void hash_file_into(Fnv1a64& h, const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = static_cast<std::size_t>(in.gcount());
        h.update(std::as_bytes(std::span(buf.data(), got)));
    }
}

}  // namespace

std::uint64_t hash_path(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw IoError("missing artifact " + path.string());
    Fnv1a64 h;
    if (fs::is_regular_file(path)) {
        hash_file_into(h, path);
        return h.digest();
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        h.update(fs::relative(f, path).generic_string());
        hash_file_into(h, f);
    }
    return h.digest();
}

}  // namespace daobs
