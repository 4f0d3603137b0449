#pragma once

#include <string>

#include "momok/param_store.hpp"

namespace momok {

// Checkpoint file layout (all integers unsigned 32-bit little-endian):
//   magic "MOMK" | version | group count
//   per group: name length, name bytes (UTF-8), rank, dims..., float32 data.
// Round-trips are bit-exact.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& store);

// Loads every group into a fresh store (grad/moment buffers zeroed).
ParamStore load_checkpoint(const std::string& path);

// Loads into an existing store whose group names and shapes must match the
// file exactly; throws CompatError otherwise.
void load_checkpoint_into(const std::string& path, ParamStore& store);

}  // namespace momok
