#pragma once

#include "ia/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ia {

/// 8-bit encoding of a [3,H,W] image in [0,1]: round(255 v), clamped.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace ia
