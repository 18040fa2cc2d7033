#pragma once

// Text checkpoint: a header line, then per tensor
//
//   tensor <name> <rows> <cols>
//   <rows*cols hexadecimal floats, one row per line>
//
// Hex floats make save -> load bit-exact.

#include <filesystem>
#include <span>
#include <string>

#include "riiu/grad.hpp"

namespace riiu {

void save_checkpoint(const std::filesystem::path& path, std::span<const ad::TensorView> tensors);
std::string checkpoint_to_string(std::span<const ad::TensorView> tensors);

/// Fills every view from the file by name. Throws std::runtime_error on a
/// missing tensor, a shape mismatch or malformed input.
void load_checkpoint(const std::filesystem::path& path, std::span<const ad::TensorView> tensors);
void checkpoint_from_string(const std::string& text, std::span<const ad::TensorView> tensors);

}  // namespace riiu
