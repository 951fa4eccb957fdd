#pragma once

#include "ia/attention.hpp"
#include "ia/autodiff.hpp"
#include "ia/boxes.hpp"
#include "ia/checkpoint.hpp"
#include "ia/ops.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ia {

enum class ModelMode { classifier, detector };

std::string_view to_string(ModelMode m);
ModelMode parse_model_mode(std::string_view s);

/// One backbone stage: conv -> relu -> optional max pool (window = stride = pool).
struct ConvLayerSpec {
  Index out_channels = 8;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  Index pool = 2;
};

struct ModelSpec {
  ModelMode mode = ModelMode::classifier;
  Index image_h = 48;
  Index image_w = 48;
  Index in_channels = 3;
  std::vector<ConvLayerSpec> backbone{{8, 3, 1, 1, 2}, {16, 3, 1, 1, 2}};
  Index roi_out_h = 4;
  Index roi_out_w = 4;
  std::vector<Index> fc_dims{64};
  /// Object classes K. The detector adds a background class at index K.
  int num_classes = 3;

  /// Backbone output shape [C, H, W]; throws ShapeError when the chain is inconsistent.
  Shape feature_shape() const;
  /// Image pixels per feature cell.
  double feature_stride() const;
  int logit_count() const { return mode == ModelMode::detector ? num_classes + 1 : num_classes; }
  int background_class() const { return num_classes; }
  void validate() const;
};

struct Model {
  ModelSpec spec;
  TensorDict params;
};

/// He-normal weights, zero biases.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

struct Proposal {
  Index sample = 0;
  Box box;                 // image coordinates
  int label = 0;           // object class, or the background class
  BoxDelta target{};       // regression target towards the matched GT box
  int gt_index = -1;       // matched GT, -1 for background
};

struct ProposalConfig {
  double jitter = 0.2;
  int per_gt = 8;
  int background = 8;
};

/// Jittered copies of every GT box labeled by the IoU >= 0.5 rule, plus
/// background boxes with IoU < 0.5 to every GT.
std::vector<Proposal> make_proposals(std::span<const GtObject> gts, double image_w,
                                     double image_h, int num_classes, std::mt19937_64& rng,
                                     const ProposalConfig& cfg);

struct ForwardOptions {
  /// Inserts a refine node fed by a constant mask leaf (all ones until replaced).
  bool attach_ia = false;
  Placement placement = Placement::roi_feature;
};

struct ForwardGraph {
  Tape tape;
  NodeId image = 0;
  NodeId features = 0;                // backbone output [N,C,H,W]
  std::optional<NodeId> roi_features;  // [R,C,h,w], detector only
  NodeId attach = 0;                  // IA attachment point F
  std::optional<NodeId> mask;         // constant mask leaf, shaped like attach
  NodeId logits = 0;
  std::optional<NodeId> deltas;
  std::map<std::string, NodeId> params;
};

ForwardGraph forward_classifier(const Model& model, const Tensor& images,
                                const ForwardOptions& opts = {});
ForwardGraph forward_detector(const Model& model, const Tensor& images,
                              std::span<const Proposal> proposals,
                              const ForwardOptions& opts = {});

struct LossNodes {
  NodeId total = 0;
  NodeId classification = 0;
  std::optional<NodeId> regression;
};

/// Softmax cross-entropy over all proposals plus L1 box loss over foreground proposals.
LossNodes detection_loss(Tape& tape, NodeId logits, NodeId deltas,
                         std::span<const Proposal> proposals, int background_class);
LossNodes classification_loss(Tape& tape, NodeId logits, std::span<const int> labels);

/// Stacks [3,H,W] images into a [N,3,H,W] batch.
Tensor stack_images(std::span<const Tensor* const> images);

}  // namespace ia
