#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "daobs/imaging.hpp"

namespace daobs {

/// On-disk dataset layout version written to meta.json.
inline constexpr int kDatasetLayoutVersion = 1;

/// Writes `dir/meta.json`, `dir/images.f32` (little-endian float32, [N, H, W]) and
/// `dir/labels.u8`. Samples must be in (pair_id ascending, H0 before H1) order.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

/// Little-endian float32 helpers shared with the checkpoint format.
void write_f32_le(std::ostream& out, std::span<const float> values);
void read_f32_le(std::istream& in, std::span<float> values);

}  // namespace daobs
