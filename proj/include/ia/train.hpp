#pragma once

#include "ia/attention.hpp"
#include "ia/config.hpp"
#include "ia/model.hpp"
#include "ia/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ia {

struct TrainConfig {
  ModelSpec model;
  std::filesystem::path train_data;
  std::filesystem::path test_data;
  std::filesystem::path out_dir;
  int epochs = 10;
  int batch_size = 8;
  double lr = 1e-2;
  double momentum = 0.9;
  /// First epoch run at lr * lr_decay_factor; defaults to 2/3 of the epochs.
  int lr_decay_epoch = -1;
  double lr_decay_factor = 0.5;
  std::uint64_t seed = 1;
  /// Write `epoch_NNN` checkpoints every k epochs (0 = final only).
  int checkpoint_every = 0;
  ProposalConfig proposals;
  /// Baseline training when empty.
  std::optional<AttentionConfig> ia;

  void validate() const;
  int decay_epoch() const { return lr_decay_epoch >= 0 ? lr_decay_epoch : (2 * epochs + 2) / 3; }
  double lr_at(int epoch) const { return epoch >= decay_epoch() ? lr * lr_decay_factor : lr; }
};

TrainConfig train_config_from(const KeyValueConfig& cfg);
/// Effective configuration with every default filled in.
KeyValueConfig to_config(const TrainConfig& cfg);
SceneSpec scene_spec_from(const KeyValueConfig& cfg);
KeyValueConfig to_config(const SceneSpec& spec);

/// SGD with classical momentum: v = m*v + g; p -= lr*v.
class Sgd {
 public:
  explicit Sgd(double momentum) : momentum_(momentum) {}
  void step(Model& model, const TensorDict& grads, double lr);

 private:
  double momentum_;
  TensorDict velocity_;
};

struct Batch {
  Tensor images;                      // [N,3,H,W]
  std::vector<int> labels;            // classifier: one label per image
  std::vector<Proposal> proposals;    // detector: proposals over the batch
};

struct StepResult {
  double loss = 0;
  double classification_loss = 0;
  double regression_loss = 0;
  Index correct = 0;  // clean-forward argmax hits
  Index total = 0;
  Index masked = 0;   // feature maps that received an inverted-attention mask
};

struct StepOptions {
  std::optional<AttentionConfig> ia;
  /// Index used to derive the per-step mask and subset streams.
  std::uint64_t step = 0;
};

/// Gradient of the probe scalar at the attachment point, one map per row.
Tensor probe_gradient(ForwardGraph& graph, const LossNodes& loss, std::span<const int> labels,
                      Probe probe);

/// Masks for the rows of the attachment point. Rows outside the randomly chosen
/// apply_probability subset get all ones.
Tensor inverted_attention_masks(const Tensor& features, const Tensor& gradient,
                                const AttentionConfig& cfg, std::uint64_t step,
                                Index* masked = nullptr);

/// One iteration: forward, probe backward, mask, refine, re-forward, loss
/// backward, SGD update. Baseline when opts.ia is empty.
StepResult ia_training_step(Model& model, Sgd& sgd, const Batch& batch, double lr,
                            const StepOptions& opts);

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double metric = 0;
  double lr = 0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

/// Assembles batch b of the given sample order; detector proposals come from a
/// stream derived from (seed, epoch, sample index).
Batch make_batch(const ModelSpec& spec, std::span<const DetectionSample> data,
                 std::span<const std::size_t> order, const ProposalConfig& proposals,
                 std::uint64_t seed, int epoch);

/// Runs every epoch in memory.
TrainResult train_model(const TrainConfig& cfg, std::span<const DetectionSample> data);

/// train_model plus files in cfg.out_dir: effective.cfg, train.log, final checkpoint
/// (and epoch checkpoints when requested).
TrainResult train(const TrainConfig& cfg);

std::string format_log_line(const EpochLog& e);

/// Checkpoint with its `<base>.cfg` sidecar holding the effective config.
void save_model(const std::filesystem::path& base, const Model& model, const TrainConfig& cfg);
Model load_model(const std::filesystem::path& base, TrainConfig* cfg = nullptr);

}  // namespace ia
