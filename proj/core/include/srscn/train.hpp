#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "srscn/losses.hpp"
#include "srscn/nets.hpp"
#include "srscn/phantom.hpp"

namespace srscn::train {

struct SliceSample {
  diff::Tensor image;           // (1, H, W)
  std::vector<uint8_t> labels;  // H*W
  double position = 0.0;        // normalized apex-to-base depth
};

struct SliceDataset {
  int height = 0, width = 0;
  std::vector<SliceSample> slices;

  size_t size() const { return slices.size(); }
  bool empty() const { return slices.empty(); }
};

SliceDataset dataset_from_volumes(const std::vector<phantom::LabeledVolume>& volumes);

struct TrainConfig {
  losses::Variant variant = losses::Variant::UNet;
  int epochs = 30;
  int gan_epochs = 10;  // adversarial training is costlier; shorter by default
  int batch_size = 8;
  double learning_rate = 1e-3;
  // Cap on the weighted shape penalty (SR reconstruction / ACNN code
  // distance) as a fraction of the current segmentation term. The raw
  // Frobenius sum runs several times L_seg while predictions are still
  // noise, which drives training into an all-background collapse at this
  // image scale; the cap keeps the objective exactly the configured
  // weighted sum whenever lambda_sr * sr <= ratio * seg. 0 disables.
  double sr_cap_ratio = 0.25;
  uint64_t seed = 0;
  bool deterministic = true;
  losses::LossConfig loss;
  nets::BackboneSpec backbone;
  nets::SRSpec sr;
  int sc_hidden = 64;
  nets::DiscrSpec discr;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::map<std::string, double> train_components;
  double train_total = 0.0;
  double val_mean_dice = 0.0;
  double seconds = 0.0;
  uint64_t checksum = 0;  // trainable parameters after the epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // epoch whose parameters were kept
};

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

/// Adam with bias correction; state keyed by parameter name.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  struct Entry {
    std::string name;
    diff::Tensor* param;
    const diff::Tensor* grad;
  };
  void step(const std::vector<Entry>& entries);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<diff::Tensor, diff::Tensor>> state_;  // m, v
};

struct Model {
  nets::BackboneSpec backbone_spec;
  nets::Params backbone;
  std::optional<nets::SCHeadSpec> sc_spec;
  std::optional<nets::Params> sc;

  uint64_t checksum() const;
};

struct PretrainResult {
  nets::Params params;
  TrainHistory history;
  double heldout_accuracy = -1.0;  // argmax pixel accuracy; -1 when no holdout given
};

/// Trains the label autoencoder on one-hot ground truth (per-pixel
/// cross-entropy against the input). The result is frozen by the callers
/// that use it as a shape constraint.
PretrainResult pretrain_sr(const SliceDataset& corpus, const SliceDataset* heldout,
                           const nets::SRSpec& spec, const TrainConfig& cfg);

struct TrainResult {
  Model model;
  TrainHistory history;
  std::optional<nets::Params> discriminator;  // GAN only
};

/// One optimization run for any variant. SRNN/SRSCN/ACNN require
/// pretrained_sr, whose parameters are not updated. Final parameters are
/// the best-validation-Dice epoch (last epoch when no validation data).
TrainResult train_variant(const SliceDataset& train_set, const SliceDataset& val_set,
                          const TrainConfig& cfg, const nets::Params* pretrained_sr);

/// Alternating discriminator/segmenter updates; one of each per batch.
TrainResult train_gan(const SliceDataset& train_set, const SliceDataset& val_set, const TrainConfig& cfg);

struct Prediction {
  std::vector<uint8_t> labels;     // same dims as the input volume
  std::vector<double> positions;   // per slice; empty when the model has no SC head
};

/// Slice-wise forward + per-pixel argmax; ties break toward the lower
/// class id.
Prediction predict(const Model& model, const phantom::LabeledVolume& volume);

/// Per-pixel argmax over the channel dim of (N,C,H,W); ties break low.
std::vector<uint8_t> argmax_labels(const diff::Tensor& prob);

/// Aggregate Dice over classes {1,2,3} on pooled voxels; a class empty in
/// both grids counts as 1.
double mean_foreground_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

/// Model bundle in a single checkpoint file (tensor names prefixed with
/// backbone/ and sc/; specs in the meta block).
void save_model(const std::filesystem::path& path, const Model& model,
                const std::map<std::string, std::string>& extra_meta = {});
Model load_model(const std::filesystem::path& path);

void save_sr_checkpoint(const std::filesystem::path& path, const nets::SRSpec& spec,
                        const nets::Params& params);
std::pair<nets::SRSpec, nets::Params> load_sr_checkpoint(const std::filesystem::path& path);

}  // namespace srscn::train
