#include "srscn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "srscn/rng.hpp"

namespace srscn::train {

using losses::Variant;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

constexpr const char* kHistoryComponents[] = {"seg_dice", "seg_cross", "sr", "sc", "adv", "d_loss"};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  return idx;
}

Tensor batch_images(const SliceDataset& ds, const std::vector<size_t>& idx) {
  const int h = ds.height, w = ds.width;
  Tensor t({static_cast<int>(idx.size()), 1, h, w});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(ds.slices[idx[i]].image.data.begin(), ds.slices[idx[i]].image.data.end(),
              t.data.begin() + static_cast<int64_t>(i) * h * w);
  return t;
}

Tensor batch_onehot(const SliceDataset& ds, const std::vector<size_t>& idx) {
  const int h = ds.height, w = ds.width;
  const int64_t chw = static_cast<int64_t>(phantom::kNumClasses) * h * w;
  Tensor t({static_cast<int>(idx.size()), phantom::kNumClasses, h, w});
  for (size_t i = 0; i < idx.size(); ++i) {
    const Tensor oh = losses::onehot_plane(ds.slices[idx[i]].labels, phantom::kNumClasses, h, w);
    std::copy(oh.data.begin(), oh.data.end(), t.data.begin() + static_cast<int64_t>(i) * chw);
  }
  return t;
}

Tensor batch_positions(const SliceDataset& ds, const std::vector<size_t>& idx) {
  Tensor t({static_cast<int>(idx.size()), 1});
  for (size_t i = 0; i < idx.size(); ++i) t[static_cast<int64_t>(i)] = ds.slices[idx[i]].position;
  return t;
}

std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size, Rng& rng) {
  const auto order = shuffled_indices(n, rng);
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < n; i += static_cast<size_t>(batch_size)) {
    batches.emplace_back(order.begin() + static_cast<int64_t>(i),
                         order.begin() + static_cast<int64_t>(std::min(n, i + static_cast<size_t>(batch_size))));
  }
  return batches;
}

// Gradient collection and the Adam update for one bound parameter store.
void collect_entries(Tape& tape, const nets::BoundParams& bound, nets::Params& params,
                     const std::string& prefix, std::vector<Adam::Entry>& entries) {
  for (auto& [name, tensor] : params.tensors) {
    const Var v = bound.at(name);
    entries.push_back(Adam::Entry{prefix + name, &tensor, &tape.grad(v)});
  }
}

double validation_dice(const Model& model, const SliceDataset& val, int batch_size) {
  if (val.empty()) return 0.0;
  std::vector<uint8_t> pred_all, gt_all;
  std::vector<size_t> idx;
  for (size_t i = 0; i < val.size(); ++i) {
    idx.push_back(i);
    if (static_cast<int>(idx.size()) == batch_size || i + 1 == val.size()) {
      const Tensor prob = nets::backbone_infer_prob(model.backbone_spec, model.backbone, batch_images(val, idx));
      const auto labels = argmax_labels(prob);
      pred_all.insert(pred_all.end(), labels.begin(), labels.end());
      for (size_t j : idx) gt_all.insert(gt_all.end(), val.slices[j].labels.begin(), val.slices[j].labels.end());
      idx.clear();
    }
  }
  return mean_foreground_dice(pred_all, gt_all);
}

struct ComponentAccumulator {
  std::map<std::string, double> sums;
  double total_sum = 0.0;
  int64_t samples = 0;

  void add(const std::map<std::string, double>& comps, double total, int64_t n) {
    for (const auto& [k, v] : comps) sums[k] += v * static_cast<double>(n);
    total_sum += total * static_cast<double>(n);
    samples += n;
  }
  std::map<std::string, double> means() const {
    std::map<std::string, double> m;
    for (const auto& [k, v] : sums) m[k] = v / static_cast<double>(samples);
    return m;
  }
  double mean_total() const { return total_sum / static_cast<double>(samples); }
};

}  // namespace

SliceDataset dataset_from_volumes(const std::vector<phantom::LabeledVolume>& volumes) {
  SliceDataset ds;
  for (const auto& v : volumes) {
    v.validate();
    if (ds.height == 0) {
      ds.height = v.dims[1];
      ds.width = v.dims[2];
    } else if (ds.height != v.dims[1] || ds.width != v.dims[2]) {
      throw ShapeError("dataset_from_volumes: mixed slice dimensions");
    }
    const size_t plane = static_cast<size_t>(v.dims[1]) * v.dims[2];
    for (int z = 0; z < v.dims[0]; ++z) {
      SliceSample s;
      s.image = Tensor({1, v.dims[1], v.dims[2]});
      for (size_t i = 0; i < plane; ++i)
        s.image.data[i] = static_cast<double>(v.intensities[static_cast<size_t>(z) * plane + i]);
      s.labels.assign(v.labels.begin() + static_cast<int64_t>(static_cast<size_t>(z) * plane),
                      v.labels.begin() + static_cast<int64_t>(static_cast<size_t>(z + 1) * plane));
      s.position = v.slice_positions[static_cast<size_t>(z)];
      ds.slices.push_back(std::move(s));
    }
  }
  return ds;
}

void TrainConfig::validate() const {
  if (epochs < 1 || gan_epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (sr_cap_ratio < 0) throw ConfigError("train config: sr_cap_ratio must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("train config: learning_rate must be > 0");
  loss.validate();
  backbone.validate();
  sr.validate();
  discr.validate();
  if (sc_hidden < 1) throw ConfigError("train config: sc_hidden must be >= 1");
}

void Adam::step(const std::vector<Entry>& entries) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const Entry& e : entries) {
    auto& [m, v] = state_[e.name];
    if (m.data.empty()) {
      m = Tensor(e.param->shape);
      v = Tensor(e.param->shape);
    }
    if (!diff::same_shape(*e.param, *e.grad))
      throw ShapeError("adam: gradient shape mismatch for " + e.name);
    for (int64_t i = 0; i < e.param->size(); ++i) {
      const double g = (*e.grad)[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      (*e.param)[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

uint64_t Model::checksum() const {
  uint64_t h = backbone.checksum();
  if (sc) h = splitmix64(h ^ sc->checksum());
  return h;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_history_csv: cannot open " + path.string());
  out << "epoch";
  for (const char* c : kHistoryComponents) out << "," << c;
  out << ",total,val_mean_dice,seconds,checksum,best\n";
  char buf[64];
  for (const auto& e : history.epochs) {
    out << e.epoch;
    for (const char* c : kHistoryComponents) {
      const auto it = e.train_components.find(c);
      std::snprintf(buf, sizeof(buf), "%.12g", it == e.train_components.end() ? 0.0 : it->second);
      out << "," << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.12g", e.train_total);
    out << "," << buf;
    std::snprintf(buf, sizeof(buf), "%.12g", e.val_mean_dice);
    out << "," << buf;
    std::snprintf(buf, sizeof(buf), "%.3f", e.seconds);
    out << "," << buf << "," << e.checksum << "," << (e.epoch == history.best_epoch ? 1 : 0) << "\n";
  }
}

std::vector<uint8_t> argmax_labels(const Tensor& prob) {
  if (prob.ndim() != 4) throw ShapeError("argmax_labels: expects (N,C,H,W)");
  const int n = prob.dim(0), c = prob.dim(1);
  const int64_t hw = static_cast<int64_t>(prob.dim(2)) * prob.dim(3);
  std::vector<uint8_t> out(static_cast<size_t>(n * hw));
  for (int ni = 0; ni < n; ++ni)
    for (int64_t i = 0; i < hw; ++i) {
      int best = 0;
      double bv = prob.data[static_cast<size_t>((static_cast<int64_t>(ni) * c) * hw + i)];
      for (int ci = 1; ci < c; ++ci) {
        const double v = prob.data[static_cast<size_t>((static_cast<int64_t>(ni) * c + ci) * hw + i)];
        if (v > bv) {  // strict: ties keep the lower class id
          bv = v;
          best = ci;
        }
      }
      out[static_cast<size_t>(static_cast<int64_t>(ni) * hw + i)] = static_cast<uint8_t>(best);
    }
  return out;
}

double mean_foreground_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw ShapeError("mean_foreground_dice: size mismatch");
  double acc = 0.0;
  for (uint8_t cls = 1; cls < phantom::kNumClasses; ++cls) {
    int64_t np = 0, ng = 0, inter = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == cls, g = gt[i] == cls;
      np += p;
      ng += g;
      inter += p && g;
    }
    acc += (np + ng) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
  }
  return acc / (phantom::kNumClasses - 1);
}

// ---------------------------------------------------------------------------
// SR pretraining

PretrainResult pretrain_sr(const SliceDataset& corpus, const SliceDataset* heldout,
                           const nets::SRSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("pretrain_sr: empty corpus");

  PretrainResult res;
  res.params = nets::init_sr(spec, mix_seed(cfg.seed, "sr_init"));
  Adam adam(cfg.learning_rate);
  Rng order_rng(mix_seed(cfg.seed, "sr_batches"));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = now_seconds();
    ComponentAccumulator acc;
    for (const auto& batch : make_batches(corpus.size(), cfg.batch_size, order_rng)) {
      const Tensor y = batch_onehot(corpus, batch);
      Tape tape;
      const nets::BoundParams bound = nets::bind(tape, res.params, true);
      Var recon;
      try {
        recon = nets::sr_forward(tape, bound, spec, tape.constant(y));
        // reconstruction cross-entropy against the input one-hot
        const Var p_true = tape.channel_sum(tape.mul_const(recon, y));
        const Var loss = tape.reduce_mean(tape.scalar_mul(
            tape.log(tape.clamp(p_true, cfg.loss.eps_clamp, 1.0 - cfg.loss.eps_clamp)), -1.0));
        tape.backward(loss);
        std::vector<Adam::Entry> entries;
        collect_entries(tape, bound, res.params, "sr/", entries);
        adam.step(entries);
        acc.add({{"sr", tape.value(loss)[0]}}, tape.value(loss)[0], static_cast<int64_t>(batch.size()));
      } catch (const NumericError& e) {
        throw TrainingError(std::string("pretrain_sr diverged: ") + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_components = acc.means();
    rec.train_total = acc.mean_total();
    rec.seconds = now_seconds() - t0;
    rec.checksum = res.params.checksum();
    res.history.epochs.push_back(std::move(rec));
  }
  res.history.best_epoch = cfg.epochs - 1;

  if (heldout && !heldout->empty()) {
    int64_t correct = 0, total = 0;
    std::vector<size_t> idx;
    for (size_t i = 0; i < heldout->size(); ++i) {
      idx.push_back(i);
      if (static_cast<int>(idx.size()) == cfg.batch_size || i + 1 == heldout->size()) {
        const Tensor y = batch_onehot(*heldout, idx);
        const Tensor recon = nets::sr_infer(spec, res.params, y);
        const auto lab = argmax_labels(recon);
        size_t k = 0;
        for (size_t j : idx) {
          for (uint8_t g : heldout->slices[j].labels) {
            correct += lab[k++] == g;
            ++total;
          }
        }
        idx.clear();
      }
    }
    res.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  }
  return res;
}

// ---------------------------------------------------------------------------
// variant training

namespace {

struct SrCache {
  std::vector<Tensor> recon;  // per slice (4,H,W) reconstruction of GT
  std::vector<Tensor> code;   // per slice (D,) code of GT

  Tensor batch_recon(const std::vector<size_t>& idx, int c, int h, int w) const {
    Tensor t({static_cast<int>(idx.size()), c, h, w});
    const int64_t chw = static_cast<int64_t>(c) * h * w;
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(recon[idx[i]].data.begin(), recon[idx[i]].data.end(),
                t.data.begin() + static_cast<int64_t>(i) * chw);
    return t;
  }
  Tensor batch_code(const std::vector<size_t>& idx) const {
    const int64_t d = code[0].size();
    Tensor t({static_cast<int>(idx.size()), static_cast<int>(d)});
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(code[idx[i]].data.begin(), code[idx[i]].data.end(), t.data.begin() + static_cast<int64_t>(i) * d);
    return t;
  }
};

// SR is frozen during segmentation training, so GT-side targets are fixed;
// compute them once.
SrCache build_sr_cache(const SliceDataset& ds, const nets::SRSpec& spec, const nets::Params& sr,
                       bool want_recon, bool want_code, int batch_size) {
  SrCache cache;
  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.size(); ++i) {
    idx.push_back(i);
    if (static_cast<int>(idx.size()) == batch_size || i + 1 == ds.size()) {
      const Tensor y = batch_onehot(ds, idx);
      Tape tape;
      const nets::BoundParams bound = nets::bind(tape, sr, false);
      if (want_recon) {
        const Tensor r = tape.value(nets::sr_forward(tape, bound, spec, tape.constant(y)));
        const int64_t chw = static_cast<int64_t>(r.dim(1)) * r.dim(2) * r.dim(3);
        for (size_t b = 0; b < idx.size(); ++b) {
          Tensor s({r.dim(1), r.dim(2), r.dim(3)});
          std::copy_n(r.data.begin() + static_cast<int64_t>(b) * chw, chw, s.data.begin());
          cache.recon.push_back(std::move(s));
        }
      }
      if (want_code) {
        Tape tc;
        const nets::BoundParams bc = nets::bind(tc, sr, false);
        const Tensor c = tc.value(nets::acnn_encode(tc, bc, spec, tc.constant(y)));
        const int64_t d = c.dim(1);
        for (size_t b = 0; b < idx.size(); ++b) {
          Tensor s({static_cast<int>(d)});
          std::copy_n(c.data.begin() + static_cast<int64_t>(b) * d, d, s.data.begin());
          cache.code.push_back(std::move(s));
        }
      }
      idx.clear();
    }
  }
  return cache;
}

}  // namespace

TrainResult train_variant(const SliceDataset& train_set, const SliceDataset& val_set,
                          const TrainConfig& cfg, const nets::Params* pretrained_sr) {
  cfg.validate();
  if (cfg.variant == Variant::GAN) return train_gan(train_set, val_set, cfg);
  if (train_set.empty()) throw ConfigError("train_variant: empty training set");

  const bool needs_sr =
      cfg.variant == Variant::SRNN || cfg.variant == Variant::SRSCN || cfg.variant == Variant::ACNN;
  if (needs_sr && !pretrained_sr)
    throw ConfigError("train_variant: variant " + losses::variant_id(cfg.variant) +
                      " requires a pretrained SR checkpoint");
  const bool has_sc = cfg.variant == Variant::SCN || cfg.variant == Variant::SRSCN;
  const bool use_recon = cfg.variant == Variant::SRNN || cfg.variant == Variant::SRSCN;
  const bool use_code = cfg.variant == Variant::ACNN;

  const uint64_t sr_checksum_before = needs_sr ? pretrained_sr->checksum() : 0;

  TrainResult res;
  res.model.backbone_spec = cfg.backbone;
  res.model.backbone = nets::init_backbone(cfg.backbone, mix_seed(cfg.seed, "backbone_init"));
  if (has_sc) {
    nets::SCHeadSpec scspec;
    scspec.in_channels = cfg.backbone.bottleneck_channels();
    scspec.hidden = cfg.sc_hidden;
    res.model.sc_spec = scspec;
    res.model.sc = nets::init_sc_head(scspec, mix_seed(cfg.seed, "sc_init"));
  }

  SrCache cache;
  if (needs_sr)
    cache = build_sr_cache(train_set, cfg.sr, *pretrained_sr, use_recon, use_code, cfg.batch_size);

  Adam adam(cfg.learning_rate);
  Rng order_rng(mix_seed(cfg.seed, "batches"));

  nets::Params best_backbone = res.model.backbone;
  std::optional<nets::Params> best_sc = res.model.sc;
  double best_val = -1.0;
  int best_epoch = -1;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = now_seconds();
    ComponentAccumulator acc;
    for (const auto& batch : make_batches(train_set.size(), cfg.batch_size, order_rng)) {
      const Tensor images = batch_images(train_set, batch);
      const Tensor onehot = batch_onehot(train_set, batch);
      try {
        Tape tape;
        const nets::BoundParams bound = nets::bind(tape, res.model.backbone, true);
        const nets::BackboneOut out = nets::backbone_forward(tape, bound, cfg.backbone, tape.constant(images));
        const losses::SegTerms seg = losses::seg_terms(tape, out.prob, onehot, cfg.loss);

        std::map<std::string, double> comps;
        comps["seg_dice"] = tape.value(seg.dice)[0];
        comps["seg_cross"] = tape.value(seg.cross)[0];
        const double seg_value =
            cfg.loss.lambda_dice * comps["seg_dice"] + cfg.loss.lambda_cross * comps["seg_cross"];
        Var total = tape.add(tape.scalar_mul(seg.dice, cfg.loss.lambda_dice),
                             tape.scalar_mul(seg.cross, cfg.loss.lambda_cross));

        // shape-penalty weight, trust-region capped against the current
        // segmentation term (see TrainConfig::sr_cap_ratio)
        const auto shape_weight = [&](double raw_value) {
          double w = cfg.loss.lambda_sr;
          if (cfg.sr_cap_ratio > 0.0 && w * raw_value > cfg.sr_cap_ratio * seg_value)
            w = cfg.sr_cap_ratio * seg_value / raw_value;
          return w;
        };

        nets::BoundParams sc_bound, sr_bound;
        if (has_sc) sc_bound = nets::bind(tape, *res.model.sc, true);
        if (needs_sr) sr_bound = nets::bind(tape, *pretrained_sr, false);

        if (has_sc) {
          const Var pos_hat = nets::sc_forward(tape, sc_bound, *res.model.sc_spec, out.bottleneck);
          const Var sc = losses::batch_mean_sq_diff(tape, pos_hat, tape.constant(batch_positions(train_set, batch)));
          comps["sc"] = tape.value(sc)[0];
          total = tape.add(total, tape.scalar_mul(sc, cfg.loss.lambda_sc));
        }
        if (use_recon) {
          const Var r_hat = nets::sr_forward(tape, sr_bound, cfg.sr, out.prob);
          const Var r_gt = tape.constant(cache.batch_recon(batch, phantom::kNumClasses, train_set.height, train_set.width));
          const Var sr = losses::batch_mean_sq_diff(tape, r_hat, r_gt);
          comps["sr"] = tape.value(sr)[0];
          total = tape.add(total, tape.scalar_mul(sr, shape_weight(comps["sr"])));
        }
        if (use_code) {
          const Var code_hat = nets::acnn_encode(tape, sr_bound, cfg.sr, out.prob);
          const Var sr = losses::batch_mean_sq_diff(tape, code_hat, tape.constant(cache.batch_code(batch)));
          comps["sr"] = tape.value(sr)[0];
          total = tape.add(total, tape.scalar_mul(sr, shape_weight(comps["sr"])));
        }

        tape.backward(total);
        std::vector<Adam::Entry> entries;
        collect_entries(tape, bound, res.model.backbone, "backbone/", entries);
        if (has_sc) collect_entries(tape, sc_bound, *res.model.sc, "sc/", entries);
        adam.step(entries);
        acc.add(comps, tape.value(total)[0], static_cast<int64_t>(batch.size()));
      } catch (const NumericError& e) {
        throw TrainingError(std::string("train_variant diverged: ") + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_components = acc.means();
    rec.train_total = acc.mean_total();
    rec.val_mean_dice = validation_dice(res.model, val_set, cfg.batch_size);
    rec.seconds = now_seconds() - t0;
    rec.checksum = res.model.checksum();
    res.history.epochs.push_back(rec);

    if (val_set.empty() || rec.val_mean_dice > best_val) {
      best_val = rec.val_mean_dice;
      best_backbone = res.model.backbone;
      best_sc = res.model.sc;
      best_epoch = epoch;
    }
  }

  res.model.backbone = std::move(best_backbone);
  res.model.sc = std::move(best_sc);
  res.history.best_epoch = best_epoch;

  if (needs_sr && pretrained_sr->checksum() != sr_checksum_before)
    throw TrainingError("train_variant: frozen SR parameters changed");
  return res;
}

TrainResult train_gan(const SliceDataset& train_set, const SliceDataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train_gan: empty training set");

  TrainResult res;
  res.model.backbone_spec = cfg.backbone;
  res.model.backbone = nets::init_backbone(cfg.backbone, mix_seed(cfg.seed, "backbone_init"));
  res.discriminator = nets::init_discr(cfg.discr, mix_seed(cfg.seed, "discr_init"));

  Adam adam_g(cfg.learning_rate);
  Adam adam_d(cfg.learning_rate);
  Rng order_rng(mix_seed(cfg.seed, "batches"));

  nets::Params best_backbone = res.model.backbone;
  double best_val = -1.0;
  int best_epoch = -1;

  for (int epoch = 0; epoch < cfg.gan_epochs; ++epoch) {
    const double t0 = now_seconds();
    ComponentAccumulator acc;
    for (const auto& batch : make_batches(train_set.size(), cfg.batch_size, order_rng)) {
      const Tensor images = batch_images(train_set, batch);
      const Tensor onehot = batch_onehot(train_set, batch);
      try {
        std::map<std::string, double> comps;
        {
          // discriminator step; segmenter output enters as a constant
          Tape tape;
          const nets::BoundParams bb = nets::bind(tape, res.model.backbone, false);
          const nets::BackboneOut out = nets::backbone_forward(tape, bb, cfg.backbone, tape.constant(images));
          const nets::BoundParams db = nets::bind(tape, *res.discriminator, true);
          const Var d_real = nets::discr_forward(tape, db, cfg.discr, tape.constant(onehot));
          const Var d_fake = nets::discr_forward(tape, db, cfg.discr, out.prob);
          const losses::GanTerms g = losses::gan_terms(tape, d_real, d_fake, cfg.loss);
          tape.backward(g.discriminator);
          std::vector<Adam::Entry> entries;
          collect_entries(tape, db, *res.discriminator, "discr/", entries);
          adam_d.step(entries);
          comps["d_loss"] = tape.value(g.discriminator)[0];
        }
        {
          // segmenter step with the discriminator frozen
          Tape tape;
          const nets::BoundParams bb = nets::bind(tape, res.model.backbone, true);
          const nets::BackboneOut out = nets::backbone_forward(tape, bb, cfg.backbone, tape.constant(images));
          const losses::SegTerms seg = losses::seg_terms(tape, out.prob, onehot, cfg.loss);
          const nets::BoundParams db = nets::bind(tape, *res.discriminator, false);
          const Var d_fake = nets::discr_forward(tape, db, cfg.discr, out.prob);
          const Var cf = tape.clamp(d_fake, cfg.loss.eps_clamp, 1.0 - cfg.loss.eps_clamp);
          const Var gen_reg = tape.reduce_mean(tape.scalar_mul(tape.log(cf), -1.0));
          comps["seg_dice"] = tape.value(seg.dice)[0];
          comps["seg_cross"] = tape.value(seg.cross)[0];
          comps["adv"] = tape.value(gen_reg)[0];
          Var total = tape.add(tape.scalar_mul(seg.dice, cfg.loss.lambda_dice),
                               tape.scalar_mul(seg.cross, cfg.loss.lambda_cross));
          total = tape.add(total, tape.scalar_mul(gen_reg, cfg.loss.lambda_adv));
          tape.backward(total);
          std::vector<Adam::Entry> entries;
          collect_entries(tape, bb, res.model.backbone, "backbone/", entries);
          adam_g.step(entries);
          acc.add(comps, tape.value(total)[0], static_cast<int64_t>(batch.size()));
        }
      } catch (const NumericError& e) {
        throw TrainingError(std::string("train_gan diverged: ") + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_components = acc.means();
    rec.train_total = acc.mean_total();
    rec.val_mean_dice = validation_dice(res.model, val_set, cfg.batch_size);
    rec.seconds = now_seconds() - t0;
    rec.checksum = res.model.checksum();
    res.history.epochs.push_back(rec);

    if (val_set.empty() || rec.val_mean_dice > best_val) {
      best_val = rec.val_mean_dice;
      best_backbone = res.model.backbone;
      best_epoch = epoch;
    }
  }

  res.model.backbone = std::move(best_backbone);
  res.history.best_epoch = best_epoch;
  return res;
}

void save_model(const std::filesystem::path& path, const Model& model,
                const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = extra_meta;
  meta["kind"] = "model";
  meta["backbone.levels"] = std::to_string(model.backbone_spec.levels);
  meta["backbone.base_channels"] = std::to_string(model.backbone_spec.base_channels);
  meta["backbone.in_channels"] = std::to_string(model.backbone_spec.in_channels);
  meta["backbone.out_classes"] = std::to_string(model.backbone_spec.out_classes);
  nets::Params merged;
  for (const auto& [name, t] : model.backbone.tensors) merged.tensors["backbone/" + name] = t;
  if (model.sc_spec && model.sc) {
    meta["sc.hidden"] = std::to_string(model.sc_spec->hidden);
    meta["sc.in_channels"] = std::to_string(model.sc_spec->in_channels);
    for (const auto& [name, t] : model.sc->tensors) merged.tensors["sc/" + name] = t;
  }
  nets::save_checkpoint(path, meta, merged);
}

Model load_model(const std::filesystem::path& path) {
  std::map<std::string, std::string> meta;
  const nets::Params merged = nets::load_checkpoint(path, &meta);
  if (meta["kind"] != "model") throw FormatError("load_model: not a model checkpoint");
  auto need = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("load_model: missing meta field " + key);
    return std::stoi(it->second);
  };
  Model m;
  m.backbone_spec.levels = need("backbone.levels");
  m.backbone_spec.base_channels = need("backbone.base_channels");
  m.backbone_spec.in_channels = need("backbone.in_channels");
  m.backbone_spec.out_classes = need("backbone.out_classes");
  const bool has_sc = meta.count("sc.hidden") > 0;
  if (has_sc) {
    nets::SCHeadSpec sc;
    sc.hidden = need("sc.hidden");
    sc.in_channels = need("sc.in_channels");
    m.sc_spec = sc;
    m.sc = nets::Params{};
  }
  for (const auto& [name, t] : merged.tensors) {
    if (name.rfind("backbone/", 0) == 0)
      m.backbone.tensors[name.substr(9)] = t;
    else if (name.rfind("sc/", 0) == 0 && has_sc)
      m.sc->tensors[name.substr(3)] = t;
    else
      throw FormatError("load_model: unexpected tensor " + name);
  }
  return m;
}

void save_sr_checkpoint(const std::filesystem::path& path, const nets::SRSpec& spec,
                        const nets::Params& params) {
  std::map<std::string, std::string> meta;
  meta["kind"] = "sr";
  meta["sr.levels"] = std::to_string(spec.levels);
  meta["sr.code_channels"] = std::to_string(spec.code_channels);
  meta["sr.classes"] = std::to_string(spec.classes);
  nets::save_checkpoint(path, meta, params);
}

std::pair<nets::SRSpec, nets::Params> load_sr_checkpoint(const std::filesystem::path& path) {
  std::map<std::string, std::string> meta;
  nets::Params params = nets::load_checkpoint(path, &meta);
  if (meta["kind"] != "sr") throw FormatError("load_sr_checkpoint: not an SR checkpoint");
  nets::SRSpec spec;
  spec.levels = std::stoi(meta.at("sr.levels"));
  spec.code_channels = std::stoi(meta.at("sr.code_channels"));
  spec.classes = std::stoi(meta.at("sr.classes"));
  spec.validate();
  return {spec, std::move(params)};
}

Prediction predict(const Model& model, const phantom::LabeledVolume& volume) {
  volume.validate();
  const SliceDataset ds = dataset_from_volumes({volume});
  Prediction pred;
  pred.labels.reserve(static_cast<size_t>(volume.voxels()));

  std::vector<size_t> idx;
  for (size_t i = 0; i < ds.size(); ++i) {
    idx.push_back(i);
    if (idx.size() == 8 || i + 1 == ds.size()) {
      const auto [prob, bottleneck] =
          nets::backbone_infer_prob_bottleneck(model.backbone_spec, model.backbone, batch_images(ds, idx));
      const auto labels = argmax_labels(prob);
      pred.labels.insert(pred.labels.end(), labels.begin(), labels.end());
      if (model.sc && model.sc_spec) {
        const Tensor pos = nets::sc_infer(*model.sc_spec, *model.sc, bottleneck);
        for (int64_t k = 0; k < pos.size(); ++k) pred.positions.push_back(pos[k]);
      }
      idx.clear();
    }
  }
  return pred;
}

}  // namespace srscn::train
