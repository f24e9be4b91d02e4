#pragma once

#include <filesystem>
#include <iosfwd>

#include "daobs/observers.hpp"

namespace daobs {

inline constexpr int kCheckpointVersion = 1;

// Layout: a magic line "daobs-checkpoint", one line of JSON (architecture,
// version, input transform, lineage, parameter count), then the parameters as
// little-endian float32, layer by layer in architecture order (weights, then bias).

void write_checkpoint(std::ostream& out, const ObserverParams& p);
ObserverParams read_checkpoint(std::istream& in);

void save_checkpoint(const ObserverParams& p, const std::filesystem::path& file);
ObserverParams load_checkpoint(const std::filesystem::path& file);

}  // namespace daobs
