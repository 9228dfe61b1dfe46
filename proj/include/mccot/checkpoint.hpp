#pragma once

#include <filesystem>
#include <string>

#include "mccot/model.hpp"

namespace mccot {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, little-endian:
///   "MCCOTCKP" | u32 version | u64 header length | header JSON
///   {"format_version", "model_config"} | u64 tensor count |
///   per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data.
/// Tensors are written in name order, so equal parameters give equal bytes.
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model);
Seq2SeqModel load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_bytes(const Seq2SeqModel& model);
Seq2SeqModel checkpoint_from_bytes(const std::string& bytes);

}  // namespace mccot
