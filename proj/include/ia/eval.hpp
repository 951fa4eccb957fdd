#pragma once

#include "ia/model.hpp"
#include "ia/synth.hpp"
#include "ia/train.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ia {

struct Detection {
  Index image = 0;
  int cls = 0;
  double score = 0;
  Box box;
};

/// Area under the monotone precision envelope of a ranked list of (score, is_true_positive).
/// Ties in score keep input order. Zero when num_gt is zero.
double average_precision(std::vector<std::pair<double, bool>> ranked, Index num_gt);

struct MapResult {
  std::vector<double> class_ap;  // NaN for classes without ground truth
  double map = 0;
};

/// Detections are matched greedily in descending score order to the unmatched
/// same-class GT of highest IoU (>= iou_threshold). mAP averages classes with GT.
MapResult mean_average_precision(std::span<const Detection> detections,
                                 std::span<const std::vector<GtObject>> ground_truth,
                                 int num_classes, double iou_threshold = 0.5);

/// Greedy per-class non-maximum suppression within each image.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold = 0.5);

/// Softmax-scored, box-decoded, NMS-filtered detections for one image.
std::vector<Detection> detect(const Model& model, const Tensor& image,
                              std::span<const Proposal> proposals, Index image_index,
                              double min_score = 0.05);

/// Proposals used at evaluation time for sample `index`.
std::vector<Proposal> eval_proposals(const ModelSpec& spec, const DetectionSample& sample,
                                     const ProposalConfig& cfg);

struct RegionAttention {
  Tensor map;  // [h,w] at the IA attachment point
  Box region;  // image pixels the map covers
};

/// Overall attention (gradient-weighted channel sum) for class cls. The
/// classifier covers the whole image; the detector covers the snapped ROI.
RegionAttention region_attention(const Model& model, const Tensor& image, int cls,
                                 const std::optional<Box>& roi = std::nullopt,
                                 Probe probe = Probe::gt_score);

/// Normalized-attention entropy / log(H*W), in [0,1]. Maps are shifted so the
/// minimum is zero and divided by the sum; constant maps count as uniform.
double normalized_entropy(const Tensor& map);
/// Fraction of pixels needed to accumulate q of the normalized attention mass.
double coverage_at(const Tensor& map, double q);

struct AttentionStats {
  double mean_entropy = 0;
  double mean_coverage = 0;
  Index objects = 0;
};

AttentionStats attention_stats(const Model& model, std::span<const DetectionSample> data,
                               double q = 0.9);

struct OcclusionOptions {
  /// Fixed patch side in pixels; negative to use patch_fraction of the object side.
  Index patch = -1;
  double patch_fraction = 0.25;
  /// Occlude the least-attended patch instead of the most-attended one.
  bool minimum = false;
  double fill = 0.5;
  ProposalConfig proposals{0.1, 4, 4};
};

struct OcclusionResult {
  double clean = 0;     // accuracy (classifier) or recall (detector)
  double occluded = 0;
  Index objects = 0;
  double drop() const { return clean - occluded; }
};

OcclusionResult occlusion_sensitivity(const Model& model, std::span<const DetectionSample> data,
                                      const OcclusionOptions& opts = {});

/// Top-left corner of the patch x patch window with the largest (or smallest)
/// attention sum over the image-space map; ties go to the first in row-major order.
std::pair<Index, Index> extreme_patch(const Tensor& image_map, Index patch, bool minimum);

/// Attention of region_attention resampled onto the full image grid (zero outside the region).
Tensor image_space_attention(const RegionAttention& att, Index height, Index width);

struct EvalOptions {
  OcclusionOptions occlusion;
  double coverage_q = 0.9;
  ProposalConfig proposals{0.1, 4, 4};
};

struct EvalReport {
  ModelMode mode = ModelMode::classifier;
  std::optional<double> accuracy;
  std::vector<double> class_ap;
  std::optional<double> map;
  OcclusionResult occlusion;
  AttentionStats attention;
  double runtime_seconds = 0;
  std::map<std::string, std::string> config;
};

double classification_accuracy(const Model& model, std::span<const DetectionSample> data);

EvalReport evaluate(const Model& model, const KeyValueConfig& config_echo,
                    std::span<const DetectionSample> data, const EvalOptions& opts = {});

std::string to_json(const EvalReport& report);

}  // namespace ia
