#include "srscn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace srscn::losses {

using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

Tensor as_batched(const Tensor& t) {
  if (t.ndim() == 4) return t;
  if (t.ndim() == 3) {
    Tensor b = t;
    b.shape = {1, t.dim(0), t.dim(1), t.dim(2)};
    return b;
  }
  throw ShapeError("loss: probability field must be (C,H,W) or (N,C,H,W), got " + diff::shape_str(t.shape));
}

void require_prob_pair(const Tensor& p, const Tensor& y) {
  if (!diff::same_shape(p, y))
    throw ShapeError("loss: prediction " + diff::shape_str(p.shape) + " vs ground truth " +
                     diff::shape_str(y.shape));
}

Var neg_log(Tape& t, Var x) { return t.scalar_mul(t.log(x), -1.0); }

}  // namespace

std::string variant_id(Variant v) {
  switch (v) {
    case Variant::UNet: return "UNET";
    case Variant::SCN: return "SCN";
    case Variant::SRNN: return "SRNN";
    case Variant::SRSCN: return "SRSCN";
    case Variant::ACNN: return "ACNN";
    case Variant::GAN: return "GAN";
  }
  throw ConfigError("unknown variant");
}

std::string variant_label(Variant v) {
  return v == Variant::UNet ? "U-Net" : variant_id(v);
}

Variant parse_variant(const std::string& token) {
  for (Variant v : kAllVariants)
    if (token == variant_id(v) || token == variant_label(v)) return v;
  throw ConfigError("unknown variant: " + token);
}

void LossConfig::validate() const {
  if (lambda_dice < 0 || lambda_cross < 0 || lambda_sr < 0 || lambda_sc < 0 || lambda_adv < 0)
    throw ConfigError("loss config: lambda weights must be >= 0");
  if (!(gamma1 > 0 && gamma1 <= 1) || !(gamma2 > 0 && gamma2 <= 1))
    throw ConfigError("loss config: gamma exponents must be in (0,1]");
  for (double w : class_weights)
    if (!(w > 0)) throw ConfigError("loss config: class weights must be > 0");
  if (!(eps_clamp > 0 && eps_clamp <= 1e-3))
    throw ConfigError("loss config: eps_clamp must be in (0, 1e-3]");
  if (!(dice_smooth > 0)) throw ConfigError("loss config: dice smoothing must be > 0");
}

// ---------------------------------------------------------------------------
// tape builders

Var dice_scores(Tape& t, Var probs, const Tensor& onehot, double smooth) {
  const Tensor& p = t.value(probs);
  require_prob_pair(p, onehot);
  if (p.ndim() != 4) throw ShapeError("dice_scores: expects (N,C,H,W)");
  const int n = p.dim(0), c = p.dim(1);

  Tensor y_sums({n, c});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0;
      const int64_t hw = static_cast<int64_t>(p.dim(2)) * p.dim(3);
      const double* src = &onehot.data[static_cast<size_t>((static_cast<int64_t>(ni) * c + ci) * hw)];
      for (int64_t i = 0; i < hw; ++i) s += src[i];
      y_sums.data[static_cast<size_t>(ni) * c + ci] = s;
    }

  const Var overlap = t.spatial_sum(t.mul_const(probs, onehot));  // (N,C) sum p*y
  const Var p_sum = t.spatial_sum(probs);
  const Var numer = t.add_const(t.scalar_mul(overlap, 2.0), smooth);
  const Var denom = t.add_const(t.add(p_sum, t.constant(y_sums)), smooth);
  return t.mul(numer, t.pow(denom, -1.0));
}

SegTerms seg_terms(Tape& t, Var probs, const Tensor& onehot, const LossConfig& cfg) {
  cfg.validate();
  const Tensor& p = t.value(probs);
  require_prob_pair(p, onehot);
  if (p.ndim() != 4) throw ShapeError("seg_terms: expects (N,C,H,W)");
  if (p.dim(1) != static_cast<int>(cfg.class_weights.size()))
    throw ShapeError("seg_terms: class count must be 4");

  const Var dice = dice_scores(t, probs, onehot, cfg.dice_smooth);
  const Var dice_term = t.reduce_mean(
      t.pow(neg_log(t, t.clamp(dice, cfg.eps_clamp, 1.0 - cfg.eps_clamp)), cfg.gamma1));

  // p at the ground-truth label, then the per-pixel weight w_l.
  const Var p_true = t.channel_sum(t.mul_const(probs, onehot));
  Tensor weights({p.dim(0), 1, p.dim(2), p.dim(3)});
  const int64_t hw = static_cast<int64_t>(p.dim(2)) * p.dim(3);
  for (int ni = 0; ni < p.dim(0); ++ni)
    for (int64_t i = 0; i < hw; ++i) {
      double w = 0.0;
      for (int ci = 0; ci < p.dim(1); ++ci)
        w += cfg.class_weights[static_cast<size_t>(ci)] *
             onehot.data[static_cast<size_t>((static_cast<int64_t>(ni) * p.dim(1) + ci) * hw + i)];
      weights.data[static_cast<size_t>(static_cast<int64_t>(ni) * hw + i)] = w;
    }
  const Var cross_term = t.reduce_mean(t.mul_const(
      t.pow(neg_log(t, t.clamp(p_true, cfg.eps_clamp, 1.0 - cfg.eps_clamp)), cfg.gamma2),
      std::move(weights)));
  return SegTerms{dice_term, cross_term};
}

Var batch_mean_sq_diff(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!diff::same_shape(av, bv))
    throw ShapeError("batch_mean_sq_diff: " + diff::shape_str(av.shape) + " vs " + diff::shape_str(bv.shape));
  const double n = static_cast<double>(av.dim(0));
  const Var d = t.sub(a, b);
  return t.scalar_mul(t.reduce_sum(t.mul(d, d)), 1.0 / n);
}

GanTerms gan_terms(Tape& t, Var d_real, Var d_fake, const LossConfig& cfg) {
  const Var cr = t.clamp(d_real, cfg.eps_clamp, 1.0 - cfg.eps_clamp);
  const Var cf = t.clamp(d_fake, cfg.eps_clamp, 1.0 - cfg.eps_clamp);
  const Var one_minus_cf = t.add_const(t.scalar_mul(cf, -1.0), 1.0);
  GanTerms g;
  g.discriminator = t.add(t.reduce_mean(neg_log(t, cr)), t.reduce_mean(neg_log(t, one_minus_cf)));
  g.generator_reg = t.reduce_mean(neg_log(t, cf));
  return g;
}

// ---------------------------------------------------------------------------
// plain scalar surfaces (evaluated through the same graph code)

double soft_dice_per_class(const Tensor& p, const Tensor& y, int cls, double smooth) {
  const Tensor pb = as_batched(p), yb = as_batched(y);
  require_prob_pair(pb, yb);
  if (cls < 0 || cls >= pb.dim(1)) throw ConfigError("soft_dice_per_class: class out of range");
  Tape t;
  const Var d = dice_scores(t, t.constant(pb), yb, smooth);
  double acc = 0.0;
  for (int ni = 0; ni < pb.dim(0); ++ni) acc += t.value(d)[static_cast<int64_t>(ni) * pb.dim(1) + cls];
  return acc / pb.dim(0);
}

LossValue seg_loss(const Tensor& p, const Tensor& y, const LossConfig& cfg) {
  const Tensor pb = as_batched(p), yb = as_batched(y);
  Tape t;
  const SegTerms terms = seg_terms(t, t.constant(pb), yb, cfg);
  LossValue lv;
  lv.components["seg_dice"] = t.value(terms.dice)[0];
  lv.components["seg_cross"] = t.value(terms.cross)[0];
  lv.total = cfg.lambda_dice * lv.components["seg_dice"] + cfg.lambda_cross * lv.components["seg_cross"];
  return lv;
}

double sr_loss(const Tensor& r_hat, const Tensor& r) {
  Tape t;
  return t.value(batch_mean_sq_diff(t, t.constant(as_batched(r_hat)), t.constant(as_batched(r))))[0];
}

double sc_loss(const Tensor& p_hat, const Tensor& p) {
  if (!diff::same_shape(p_hat, p)) throw ShapeError("sc_loss: shape mismatch");
  Tape t;
  return t.value(batch_mean_sq_diff(t, t.constant(p_hat), t.constant(p)))[0];
}

double acnn_loss(const Tensor& code_pred, const Tensor& code_gt) {
  if (!diff::same_shape(code_pred, code_gt)) throw ShapeError("acnn_loss: shape mismatch");
  Tape t;
  return t.value(batch_mean_sq_diff(t, t.constant(code_pred), t.constant(code_gt)))[0];
}

std::pair<double, double> gan_losses(const Tensor& d_real, const Tensor& d_fake, double eps_clamp) {
  LossConfig cfg;
  cfg.eps_clamp = eps_clamp;
  Tape t;
  const GanTerms g = gan_terms(t, t.constant(d_real), t.constant(d_fake), cfg);
  return {t.value(g.discriminator)[0], t.value(g.generator_reg)[0]};
}

LossValue combined_loss(Variant variant, const std::map<std::string, double>& components,
                        const LossConfig& cfg) {
  cfg.validate();
  auto need = [&](const std::string& name) {
    auto it = components.find(name);
    if (it == components.end())
      throw ConfigError("combined_loss: variant " + variant_id(variant) + " needs component " + name);
    return it->second;
  };
  LossValue lv;
  lv.components["seg_dice"] = need("seg_dice");
  lv.components["seg_cross"] = need("seg_cross");
  lv.total = cfg.lambda_dice * lv.components["seg_dice"] + cfg.lambda_cross * lv.components["seg_cross"];
  switch (variant) {
    case Variant::UNet:
      break;
    case Variant::SCN:
      lv.components["sc"] = need("sc");
      lv.total += cfg.lambda_sc * lv.components["sc"];
      break;
    case Variant::SRNN:
      lv.components["sr"] = need("sr");
      lv.total += cfg.lambda_sr * lv.components["sr"];
      break;
    case Variant::SRSCN:
      lv.components["sc"] = need("sc");
      lv.components["sr"] = need("sr");
      lv.total += cfg.lambda_sc * lv.components["sc"] + cfg.lambda_sr * lv.components["sr"];
      break;
    case Variant::ACNN:
      lv.components["sr"] = need("sr");  // code distance rides the SR weight
      lv.total += cfg.lambda_sr * lv.components["sr"];
      break;
    case Variant::GAN:
      lv.components["adv"] = need("adv");
      lv.total += cfg.lambda_adv * lv.components["adv"];
      break;
  }
  return lv;
}

std::array<double, 4> frequency_class_weights(const std::vector<const std::vector<uint8_t>*>& label_grids) {
  std::array<double, 4> freq = {0, 0, 0, 0};
  for (const auto* grid : label_grids)
    for (uint8_t l : *grid) {
      if (l >= 4) throw ConfigError("frequency_class_weights: label outside {0..3}");
      freq[l] += 1.0;
    }
  const double total = freq[0] + freq[1] + freq[2] + freq[3];
  if (total == 0.0) throw ConfigError("frequency_class_weights: empty corpus");
  std::array<double, 4> w{};
  for (size_t i = 0; i < 4; ++i) w[i] = std::sqrt(total / std::max(freq[i], 1.0));
  return w;
}

Tensor onehot_plane(const std::vector<uint8_t>& labels, int classes, int h, int w) {
  if (static_cast<size_t>(h) * w != labels.size()) throw ShapeError("onehot_plane: size mismatch");
  Tensor y({classes, h, w});
  for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i) {
    const uint8_t l = labels[static_cast<size_t>(i)];
    if (l >= classes) throw ShapeError("onehot_plane: label outside class range");
    y.data[static_cast<size_t>(l) * labels.size() + static_cast<size_t>(i)] = 1.0;
  }
  return y;
}

}  // namespace srscn::losses
