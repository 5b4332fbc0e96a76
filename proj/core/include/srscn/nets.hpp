#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "srscn/tape.hpp"

namespace srscn::nets {

struct BackboneSpec {
  int levels = 4;
  int base_channels = 16;
  int in_channels = 1;
  int out_classes = 4;
  void validate() const;
  int bottleneck_channels() const { return base_channels << levels; }
};

struct SRSpec {
  int levels = 3;
  int code_channels = 32;
  int classes = 4;
  void validate() const;
  int encoder_channels(int level) const { return code_channels >> (levels - 1 - level); }
};

struct SCHeadSpec {
  int in_channels = 0;  // bottleneck channel count of the backbone it rides on
  int hidden = 64;
  void validate() const;
};

struct DiscrSpec {
  int levels = 3;
  int base_channels = 8;
  int in_channels = 4;
  int hidden = 32;
  void validate() const;
};

/// Flat named parameter store.
struct Params {
  std::map<std::string, diff::Tensor> tensors;

  int64_t count() const;
  uint64_t checksum() const;
  const diff::Tensor& at(const std::string& name) const;
};

Params init_backbone(const BackboneSpec& spec, uint64_t seed);
Params init_sr(const SRSpec& spec, uint64_t seed);
Params init_sc_head(const SCHeadSpec& spec, uint64_t seed);
Params init_discr(const DiscrSpec& spec, uint64_t seed);

// Closed-form parameter counts, asserted against the stores in tests.
int64_t backbone_param_count(const BackboneSpec& spec);
int64_t sr_param_count(const SRSpec& spec);
int64_t sc_head_param_count(const SCHeadSpec& spec);
int64_t discr_param_count(const DiscrSpec& spec);

/// Parameters bound onto a tape for one forward/backward pass.
struct BoundParams {
  std::map<std::string, diff::Var> vars;
  diff::Var at(const std::string& name) const;
};
BoundParams bind(diff::Tape& tape, const Params& params, bool trainable);

struct BackboneOut {
  diff::Var prob;        // (N, classes, H, W), channel softmax
  diff::Var bottleneck;  // (N, C, H/2^levels, W/2^levels)
};

/// U-Net: conv/pool pyramid, symmetric decoder with skip concatenation,
/// 1x1 head, channel softmax.
BackboneOut backbone_forward(diff::Tape& tape, const BoundParams& p, const BackboneSpec& spec,
                             diff::Var image);

/// Label autoencoder; output shape equals input shape, channel softmax.
diff::Var sr_forward(diff::Tape& tape, const BoundParams& p, const SRSpec& spec, diff::Var labelmap);
/// Encoder half of the autoencoder, flattened per sample to (N, D).
diff::Var acnn_encode(diff::Tape& tape, const BoundParams& p, const SRSpec& spec, diff::Var labelmap);

/// Slice-position regressor over the pooled bottleneck; output (N, 1) in (0,1).
diff::Var sc_forward(diff::Tape& tape, const BoundParams& p, const SCHeadSpec& spec, diff::Var bottleneck);

/// Real-vs-segmentation discriminator over a 4-channel label map; (N, 1) in (0,1).
diff::Var discr_forward(diff::Tape& tape, const BoundParams& p, const DiscrSpec& spec, diff::Var labelmap);

// Tape-free inference conveniences.
diff::Tensor backbone_infer_prob(const BackboneSpec& spec, const Params& params, const diff::Tensor& images);
std::pair<diff::Tensor, diff::Tensor> backbone_infer_prob_bottleneck(const BackboneSpec& spec,
                                                                     const Params& params,
                                                                     const diff::Tensor& images);
diff::Tensor sr_infer(const SRSpec& spec, const Params& params, const diff::Tensor& labelmap);
diff::Tensor sc_infer(const SCHeadSpec& spec, const Params& params, const diff::Tensor& bottleneck);

/// Checkpoint container: text header (meta + tensor names/shapes), blank
/// line, little-endian float32 payload. Write(read(f)) reproduces f byte
/// for byte.
void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& meta,
                     const Params& params);
Params load_checkpoint(const std::filesystem::path& path, std::map<std::string, std::string>* meta_out);

}  // namespace srscn::nets
