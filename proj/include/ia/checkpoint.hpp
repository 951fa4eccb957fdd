#pragma once

#include "ia/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace ia {

using TensorDict = std::map<std::string, Tensor>;

/// Writes `<base>.index` (one line per tensor: name, "f64", shape, byte offset)
/// and `<base>.bin` (little-endian IEEE-754 doubles in index order).
void save_checkpoint(const std::filesystem::path& base, const TensorDict& tensors);
TensorDict load_checkpoint(const std::filesystem::path& base);

std::filesystem::path index_path(const std::filesystem::path& base);
std::filesystem::path blob_path(const std::filesystem::path& base);

}  // namespace ia
