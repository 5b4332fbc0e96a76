#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srscn/tape.hpp"

namespace srscn::losses {

enum class Variant { UNet, SCN, SRNN, SRSCN, ACNN, GAN };

inline constexpr std::array<Variant, 6> kAllVariants = {Variant::UNet, Variant::SCN, Variant::SRNN,
                                                        Variant::SRSCN, Variant::ACNN, Variant::GAN};

/// Config token, e.g. "UNET", "SRSCN".
std::string variant_id(Variant v);
/// Report row label, e.g. "U-Net".
std::string variant_label(Variant v);
Variant parse_variant(const std::string& token);

struct LossConfig {
  double lambda_dice = 0.8;
  double lambda_cross = 0.2;
  double gamma1 = 0.3;  // exponent on -ln(Dice)
  double gamma2 = 0.3;  // exponent on -ln(p)
  std::array<double, 4> class_weights = {1.0, 1.0, 1.0, 1.0};
  double lambda_sr = 5e-4;
  double lambda_sc = 1e-6;
  double lambda_adv = 0.1;
  double eps_clamp = 1e-7;
  double dice_smooth = 1.0;

  void validate() const;
};

struct LossValue {
  double total = 0.0;
  std::map<std::string, double> components;  // subset of {seg_dice, seg_cross, sr, sc, adv}
};

// --- tape builders: every term differentiable end-to-end ---

/// Per-sample per-class soft Dice (2*sum(p*y)+s)/(sum(p)+sum(y)+s) -> (N,C).
diff::Var dice_scores(diff::Tape& t, diff::Var probs, const diff::Tensor& onehot, double smooth);

struct SegTerms {
  diff::Var dice;   // scalar: mean over samples/classes of (-ln Dice)^gamma1
  diff::Var cross;  // scalar: mean over pixels of w_l * (-ln p_l)^gamma2
};
SegTerms seg_terms(diff::Tape& t, diff::Var probs, const diff::Tensor& onehot, const LossConfig& cfg);

/// sum((a-b)^2) / N for (N, ...) tensors; the SR, SC, and ACNN penalty.
diff::Var batch_mean_sq_diff(diff::Tape& t, diff::Var a, diff::Var b);

struct GanTerms {
  diff::Var discriminator;  // -mean ln D(real) - mean ln(1 - D(fake))
  diff::Var generator_reg;  // -mean ln D(fake)
};
GanTerms gan_terms(diff::Tape& t, diff::Var d_real, diff::Var d_fake, const LossConfig& cfg);

// --- plain scalar surfaces over tensors ---

double soft_dice_per_class(const diff::Tensor& p, const diff::Tensor& y, int cls, double smooth = 1.0);
/// Components {seg_dice, seg_cross}; total = lambda_dice*dice + lambda_cross*cross.
LossValue seg_loss(const diff::Tensor& p, const diff::Tensor& y, const LossConfig& cfg);
double sr_loss(const diff::Tensor& r_hat, const diff::Tensor& r);
double sc_loss(const diff::Tensor& p_hat, const diff::Tensor& p);
double acnn_loss(const diff::Tensor& code_pred, const diff::Tensor& code_gt);
/// (discriminator_loss, generator_reg).
std::pair<double, double> gan_losses(const diff::Tensor& d_real, const diff::Tensor& d_fake,
                                     double eps_clamp = 1e-7);

/// Weighted combination for a variant from raw component values. Components
/// the variant does not use are ignored; missing required ones throw.
LossValue combined_loss(Variant variant, const std::map<std::string, double>& components,
                        const LossConfig& cfg);

/// w_l = sqrt(sum_k f_k / f_l) over pooled label grids (class voxel counts).
std::array<double, 4> frequency_class_weights(const std::vector<const std::vector<uint8_t>*>& label_grids);

/// (classes, h, w) one-hot encoding of a label plane.
diff::Tensor onehot_plane(const std::vector<uint8_t>& labels, int classes, int h, int w);

}  // namespace srscn::losses
