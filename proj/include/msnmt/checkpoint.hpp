#pragma once

#include <filesystem>

#include "msnmt/data.hpp"
#include "msnmt/model.hpp"

namespace msnmt {

// "MSNM", u32 version, u32 config length + config text, u32 tensor count, then
// per tensor: u16 name length + name, u8 rank, u32 dims, float32 payload.
// Everything little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model<float>& model, const fs::path& path);
Model<float> load_checkpoint(const fs::path& path);

// The vocabulary travels next to the checkpoint as "<path>.vocab".
fs::path vocab_path_for(const fs::path& checkpoint);
void save_checkpoint_bundle(const Model<float>& model, const Vocab& vocab, const fs::path& path);

}  // namespace msnmt
