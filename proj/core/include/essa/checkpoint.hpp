#pragma once

#include <filesystem>

#include "essa/pipeline.hpp"

namespace essa {

/// ESCK binary checkpoint: magic "ESCK", version u16, a manifest of named
/// tensors {name, rank, dims}, a 32-bit little-endian float payload in
/// manifest order guarded by a 64-bit FNV-1a checksum, then the resume
/// section (adapter spec, optimizer scalars and moments, teacher/EMA state,
/// prototype center, rng stream states, epoch counter) and a 64-bit exact
/// copy of the model values so interrupted runs resume bit-identically.
/// save -> load -> save is byte-identical.
void save_checkpoint(const RunState& state, const std::filesystem::path& path);

RunState load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

}  // namespace essa
