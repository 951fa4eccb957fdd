#pragma once

#include "ia/boxes.hpp"
#include "ia/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ia {

enum class ShapeKind { disk, square, triangle };

std::string_view to_string(ShapeKind k);
ShapeKind parse_shape(std::string_view s);

/// Applied in a fixed order: occlude, then box blur, then gaussian noise.
struct CorruptionSpec {
  double occlusion_probability = 0.0;
  Index occluder_min = 4;
  Index occluder_max = 10;
  double noise_sigma = 0.0;
  Index blur_radius = 0;
};

struct SceneSpec {
  Index height = 48;
  Index width = 48;
  std::vector<ShapeKind> classes{ShapeKind::disk, ShapeKind::square, ShapeKind::triangle};
  Index min_objects = 1;
  Index max_objects = 1;
  Index min_size = 14;
  Index max_size = 24;
  double min_intensity = 0.45;
  double max_intensity = 1.0;
  double max_background = 0.25;
  CorruptionSpec corruption;
  std::uint64_t seed = 1;

  int num_classes() const { return static_cast<int>(classes.size()); }
  /// Throws std::invalid_argument on an empty range or a probability outside [0,1].
  void validate() const;
};

struct DetectionSample {
  Tensor image;  // [3,H,W] in [0,1]
  std::vector<GtObject> objects;
  std::vector<Box> occluders;
  std::uint64_t seed = 0;
  Index index = 0;
};

/// Whether the pixel center (px, py) lies inside a shape drawn in box.
bool inside_shape(ShapeKind kind, const Box& box, double px, double py);

/// Pure function of (spec, index). The first object's class is index mod K so
/// that single-object datasets are class balanced.
DetectionSample generate_sample(const SceneSpec& spec, Index index);
std::vector<DetectionSample> generate_dataset(const SceneSpec& spec, Index n);

/// Occluding rectangle (over one of targets when given), box blur, clipped
/// gaussian noise; output clamped to [0,1]. Placed occluders are appended.
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::mt19937_64& rng,
               std::span<const Box> targets = {}, std::vector<Box>* occluders = nullptr);

Tensor box_blur(const Tensor& image, Index radius);

/// `<dir>/manifest.jsonl` plus one P6 image per sample.
void write_dataset(const std::filesystem::path& dir, std::span<const DetectionSample> samples);
std::vector<DetectionSample> read_dataset(const std::filesystem::path& dir);

}  // namespace ia
