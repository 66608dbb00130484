#pragma once

#include <filesystem>
#include <string>

#include "nseg/model.hpp"

namespace nseg {

/// Checkpoint wire format, bit-exact:
///   magic "NSEG1\n"
///   header line "depth base_channels kernel input_channels prune_level\n"
///   per parameter in canonical order: u16-LE name length, UTF-8 name,
///   u8 dim count, u32-LE dims, raw float32-LE values.
std::string checkpoint_bytes(const NestedUNet<float>& model);

NestedUNet<float> checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NestedUNet<float>& model);

NestedUNet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace nseg
