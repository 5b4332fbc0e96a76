// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Runs the cheap checks first and the full directional
// ablation last; wall time per criterion is printed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include "srscn/gradcheck.hpp"
#include "srscn/harness.hpp"
#include "srscn/rng.hpp"

#include "../tests/oracles.hpp"
#include "../tests/test_util.hpp"

using namespace srscn;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using losses::Variant;

namespace {

namespace fs = std::filesystem;

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct Outcome {
  int id;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor random_onehot(int n, int c, int h, int w, Rng& rng) {
  Tensor y({n, c, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int ni = 0; ni < n; ++ni)
    for (int64_t i = 0; i < hw; ++i)
      y.data[static_cast<size_t>((static_cast<int64_t>(ni) * c + rng.uniform_int(0, c - 1)) * hw + i)] = 1.0;
  return y;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;  // average rank over ties
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// Shared micro specs for criterion 1 (16x16 inputs, 2-level nets).
nets::BackboneSpec micro_backbone() {
  nets::BackboneSpec s;
  s.levels = 2;
  s.base_channels = 4;
  return s;
}
nets::SRSpec micro_sr() {
  nets::SRSpec s;
  s.levels = 2;
  s.code_channels = 8;
  return s;
}

// Max gradient error over every tensor in a parameter store, each checked
// with all other tensors held constant at their stored values. Returns -1
// when the operating point sits within 10h of a kink; the caller redraws
// the whole net. Tensors are swept on two threads; each check runs on its
// own tape.
double params_gradient_error(
    const nets::Params& params,
    const std::function<Var(Tape&, const std::function<Var(Tape&, const std::string&)>&)>& build_with,
    double h) {
  {
    Tape probe;
    build_with(probe, [&](Tape& t, const std::string& name) { return t.constant(params.at(name)); });
    if (probe.kink_margin() < 10.0 * h) return -1.0;
  }
  std::vector<std::pair<std::string, const Tensor*>> targets;
  for (const auto& [name, tensor] : params.tensors) targets.emplace_back(name, &tensor);

  const auto sweep = [&](size_t begin, size_t end) {
    double worst = 0.0;
    for (size_t i = begin; i < end; ++i) {
      const std::string& target = targets[i].first;
      const auto build = [&](Tape& t, Var x) {
        const auto lookup = [&](Tape& tape, const std::string& name) -> Var {
          return name == target ? x : tape.constant(params.at(name));
        };
        return build_with(t, lookup);
      };
      // probe point = the stored tensor, so the net stays at the vetted
      // operating point
      const auto res = diff::grad_check(build, *targets[i].second, h);
      if (!res.margin_ok) return -1.0;
      worst = std::max(worst, res.max_rel_err);
    }
    return worst;
  };
  const size_t mid = targets.size() / 2;
  auto front = std::async(std::launch::async, sweep, size_t{0}, mid);
  const double back = sweep(mid, targets.size());
  const double fr = front.get();
  if (fr < 0.0 || back < 0.0) return -1.0;
  return std::max(fr, back);
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness

Outcome criterion1() {
  Outcome o{1, "gradient correctness (losses + network forwards, 10 seeds)"};
  const double t_start = now();
  const double tol = 1e-4, h = 1e-5;
  double worst = 0.0;
  std::string worst_at;
  losses::LossConfig lcfg;
  std::string at;  // current sub-check, for failure reporting
  const auto note = [&](double err) {
    if (err > worst) {
      worst = err;
      worst_at = at;
    }
  };

  try {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    at = "seed " + std::to_string(seed);
    Rng rng(mix_seed(seed, "c1"));

    // Eq. 1 seg loss wrt logits
    {
      at = "seed " + std::to_string(seed) + "/seg-wrt-logits";
      const Tensor y = random_onehot(1, 4, 8, 8, rng);
      const auto build = [&](Tape& t, Var x) {
        const auto terms = losses::seg_terms(t, t.softmax_channels(x), y, lcfg);
        return t.add(t.scalar_mul(terms.dice, lcfg.lambda_dice), t.scalar_mul(terms.cross, lcfg.lambda_cross));
      };
      const auto sampler = [](Rng& r) { return testutil::random_tensor({1, 4, 8, 8}, r, -1.5, 1.5); };
      note(testutil::checked_gradient_error(build, sampler, mix_seed(seed, "seg"), h));
    }
    // Eq. 3 SR term wrt predicted reconstruction
    {
      at = "seed " + std::to_string(seed) + "/sr-term";
      const Tensor ref = testutil::random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0);
      const auto build = [&](Tape& t, Var x) { return losses::batch_mean_sq_diff(t, x, t.constant(ref)); };
      const auto sampler = [](Rng& r) { return testutil::random_tensor({2, 4, 8, 8}, r, 0.0, 1.0); };
      note(testutil::checked_gradient_error(build, sampler, mix_seed(seed, "sr"), h));
    }
    // Eq. 4 SC term wrt predicted positions
    {
      at = "seed " + std::to_string(seed) + "/sc-term";
      const Tensor ref = testutil::random_tensor({4, 1}, rng, 0.0, 1.0);
      const auto build = [&](Tape& t, Var x) {
        return losses::batch_mean_sq_diff(t, t.sigmoid(x), t.constant(ref));
      };
      const auto sampler = [](Rng& r) { return testutil::random_tensor({4, 1}, r, -1.5, 1.5); };
      note(testutil::checked_gradient_error(build, sampler, mix_seed(seed, "sc"), h));
    }
    // ACNN code distance wrt predicted code
    {
      at = "seed " + std::to_string(seed) + "/acnn-term";
      const Tensor ref = testutil::random_tensor({2, 16}, rng, -1.0, 1.0);
      const auto build = [&](Tape& t, Var x) { return losses::batch_mean_sq_diff(t, x, t.constant(ref)); };
      const auto sampler = [](Rng& r) { return testutil::random_tensor({2, 16}, r, -1.0, 1.0); };
      note(testutil::checked_gradient_error(build, sampler, mix_seed(seed, "acnn"), h));
    }
    // GAN terms wrt discriminator outputs (through sigmoid)
    {
      at = "seed " + std::to_string(seed) + "/gan-terms";
      const auto build_d = [&](Tape& t, Var x) {
        Rng rr(mix_seed(seed, "ganref"));
        const Var real = t.sigmoid(t.constant(testutil::random_tensor({4, 1}, rr, -1, 1)));
        return losses::gan_terms(t, real, t.sigmoid(x), lcfg).discriminator;
      };
      const auto build_g = [&](Tape& t, Var x) {
        return losses::gan_terms(t, t.sigmoid(x), t.sigmoid(x), lcfg).generator_reg;
      };
      const auto sampler = [](Rng& r) { return testutil::random_tensor({4, 1}, r, -1.5, 1.5); };
      note(testutil::checked_gradient_error(build_d, sampler, mix_seed(seed, "gd"), h));
      note(testutil::checked_gradient_error(build_g, sampler, mix_seed(seed, "gg"), h));
    }
    // network forwards wrt inputs (random linear functional of the
    // output). A parameter draw can leave dead channels whose relu zeros
    // sit exactly on the kink for every input, so rejections redraw the
    // net as well as the probe.
    at = "seed " + std::to_string(seed) + "/forwards-wrt-inputs";
    {
      const Tensor probe = testutil::random_tensor({1, 4, 16, 16}, rng, -1, 1);
      const auto with_redraw = [&](const std::function<std::function<Var(Tape&, Var)>(uint64_t)>& make_build,
                                   const std::function<Tensor(Rng&)>& sampler, uint64_t tag) {
        for (int attempt = 0; attempt < 50; ++attempt) {
          try {
            return testutil::checked_gradient_error(make_build(mix_seed(tag, static_cast<uint64_t>(attempt))),
                                                    sampler, mix_seed(tag, 7000 + static_cast<uint64_t>(attempt)),
                                                    h, 8);
          } catch (const Error&) {
            continue;
          }
        }
        throw Error("input-gradient check rejected across 50 parameter redraws");
      };

      const auto bspec = micro_backbone();
      const auto make_bb = [&, probe](uint64_t s) {
        const auto bp = std::make_shared<nets::Params>(nets::init_backbone(bspec, s));
        return std::function<Var(Tape&, Var)>([bp, bspec, probe](Tape& t, Var x) {
          const auto bound = nets::bind(t, *bp, false);
          return t.reduce_sum(t.mul_const(nets::backbone_forward(t, bound, bspec, x).prob, probe));
        });
      };
      const auto sampler_img = [](Rng& r) { return testutil::random_tensor({1, 1, 16, 16}, r, 0.0, 1.0); };
      note(with_redraw(make_bb, sampler_img, mix_seed(seed, "bbx")));

      at = "seed " + std::to_string(seed) + "/sr-forward-wrt-input";
      const auto srspec = micro_sr();
      const auto make_sr = [&, probe](uint64_t s) {
        const auto srp = std::make_shared<nets::Params>(nets::init_sr(srspec, s));
        return std::function<Var(Tape&, Var)>([srp, srspec, probe](Tape& t, Var x) {
          const auto bound = nets::bind(t, *srp, false);
          return t.reduce_sum(t.mul_const(nets::sr_forward(t, bound, srspec, t.softmax_channels(x)), probe));
        });
      };
      const auto sampler_lab = [](Rng& r) { return testutil::random_tensor({1, 4, 16, 16}, r, -1.5, 1.5); };
      note(with_redraw(make_sr, sampler_lab, mix_seed(seed, "srx")));

      at = "seed " + std::to_string(seed) + "/sc-forward-wrt-input";
      nets::SCHeadSpec scspec;
      scspec.in_channels = bspec.bottleneck_channels();
      scspec.hidden = 8;
      const auto make_sc = [&](uint64_t s) {
        const auto scp = std::make_shared<nets::Params>(nets::init_sc_head(scspec, s));
        return std::function<Var(Tape&, Var)>([scp, scspec](Tape& t, Var x) {
          const auto bound = nets::bind(t, *scp, false);
          return t.reduce_sum(nets::sc_forward(t, bound, scspec, x));
        });
      };
      const auto sampler_sc = [&](Rng& r) {
        return testutil::random_tensor({1, scspec.in_channels, 4, 4}, r, -1.0, 1.0);
      };
      note(with_redraw(make_sc, sampler_sc, mix_seed(seed, "scx")));

      at = "seed " + std::to_string(seed) + "/discr-forward-wrt-input";
      nets::DiscrSpec dspec;
      dspec.levels = 2;
      dspec.base_channels = 4;
      const auto make_d = [&](uint64_t s) {
        const auto dp = std::make_shared<nets::Params>(nets::init_discr(dspec, s));
        return std::function<Var(Tape&, Var)>([dp, dspec](Tape& t, Var x) {
          const auto bound = nets::bind(t, *dp, false);
          return t.reduce_sum(nets::discr_forward(t, bound, dspec, t.softmax_channels(x)));
        });
      };
      note(with_redraw(make_d, sampler_lab, mix_seed(seed, "dscx")));
    }
    // Eq. 6 full SRSCN objective wrt every backbone parameter on the
    // 2-level micro net, SR frozen; plus per-net parameter sweeps for the
    // SR, SC, and discriminator forwards. Nets landing near a kink are
    // redrawn.
    at = "seed " + std::to_string(seed) + "/params-sweeps";
    int tol_redraws = 0;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 200) {
        o.detail = "seed " + std::to_string(seed) + ": could not sample micro nets away from kinks";
        return o;
      }
      const uint64_t asalt = mix_seed(seed, static_cast<uint64_t>(attempt));
      const auto bspec = micro_backbone();
      const auto srspec = micro_sr();
      nets::SCHeadSpec scspec;
      scspec.in_channels = bspec.bottleneck_channels();
      scspec.hidden = 8;
      nets::DiscrSpec dspec;
      dspec.levels = 2;
      dspec.base_channels = 4;
      const auto bp = nets::init_backbone(bspec, mix_seed(asalt, "bb6"));
      const auto srp = nets::init_sr(srspec, mix_seed(asalt, "sr6"));
      const auto scp = nets::init_sc_head(scspec, mix_seed(asalt, "sc6"));
      const auto dp = nets::init_discr(dspec, mix_seed(asalt, "d6"));
      Rng drng(mix_seed(asalt, "data6"));
      const Tensor img = testutil::random_tensor({1, 1, 16, 16}, drng, 0.0, 1.0);
      const Tensor y = random_onehot(1, 4, 16, 16, drng);
      const Tensor pos({1, 1}, {drng.uniform(0.1, 0.9)});
      const Tensor probe6 = testutil::random_tensor({1, 4, 16, 16}, drng, -1, 1);
      const Tensor probe1 = testutil::random_tensor({1, 1}, drng, -1, 1);
      losses::LossConfig big = lcfg;
      big.lambda_sr = 0.05;  // large enough that the SR path contributes at 1e-4 scale
      big.lambda_sc = 0.05;

      // SR is frozen, so the gold-standard reconstruction is a constant of
      // the sweep; evaluate it once.
      const Tensor r_gt_value = nets::sr_infer(srspec, srp, y);

      const auto srscn_with = [&](Tape& t, const std::function<Var(Tape&, const std::string&)>& bb_lookup) {
        nets::BoundParams bb;
        for (const auto& [name, _] : bp.tensors) bb.vars[name] = bb_lookup(t, name);
        const auto sb = nets::bind(t, srp, false);
        const auto scb = nets::bind(t, scp, false);
        const auto out = nets::backbone_forward(t, bb, bspec, t.constant(img));
        const auto terms = losses::seg_terms(t, out.prob, y, big);
        Var total = t.add(t.scalar_mul(terms.dice, big.lambda_dice), t.scalar_mul(terms.cross, big.lambda_cross));
        const Var r_hat = nets::sr_forward(t, sb, srspec, out.prob);
        total = t.add(total,
                      t.scalar_mul(losses::batch_mean_sq_diff(t, r_hat, t.constant(r_gt_value)), big.lambda_sr));
        const Var p_hat = nets::sc_forward(t, scb, scspec, out.bottleneck);
        total = t.add(total, t.scalar_mul(losses::batch_mean_sq_diff(t, p_hat, t.constant(pos)), big.lambda_sc));
        return total;
      };
      const auto sr_with = [&](Tape& t, const std::function<Var(Tape&, const std::string&)>& lookup) {
        nets::BoundParams b;
        for (const auto& [name, _] : srp.tensors) b.vars[name] = lookup(t, name);
        return t.reduce_sum(t.mul_const(nets::sr_forward(t, b, srspec, t.constant(y)), probe6));
      };
      const auto sc_with = [&](Tape& t, const std::function<Var(Tape&, const std::string&)>& lookup) {
        nets::BoundParams b;
        for (const auto& [name, _] : scp.tensors) b.vars[name] = lookup(t, name);
        Rng rr(mix_seed(asalt, "scin"));
        const Tensor bott = testutil::random_tensor({1, scspec.in_channels, 4, 4}, rr, -1, 1);
        return t.reduce_sum(t.mul_const(nets::sc_forward(t, b, scspec, t.constant(bott)), probe1));
      };
      const auto d_with = [&](Tape& t, const std::function<Var(Tape&, const std::string&)>& lookup) {
        nets::BoundParams b;
        for (const auto& [name, _] : dp.tensors) b.vars[name] = lookup(t, name);
        return t.reduce_sum(t.mul_const(nets::discr_forward(t, b, dspec, t.constant(y)), probe1));
      };

      const double e1 = params_gradient_error(bp, srscn_with, h);
      const double e2 = params_gradient_error(srp, sr_with, h);
      const double e3 = params_gradient_error(scp, sc_with, h);
      const double e4 = params_gradient_error(dp, d_with, h);
      if (e1 < 0 || e2 < 0 || e3 < 0 || e4 < 0) continue;  // kink at the operating point: redraw
      // The finite-difference oracle has one known false-positive mode: a
      // near-zero-gradient coordinate directly downstream of a small-margin
      // kink has no step that is both kink-free and above the roundoff
      // floor. That is a property of the sampled operating point, so a
      // bounded number of redraws disambiguates it; a real gradient bug
      // fails every draw.
      if (std::max({e1, e2, e3, e4}) >= tol && tol_redraws < 3) {
        ++tol_redraws;
        continue;
      }
      at = "seed " + std::to_string(seed) + "/params-backbone-srscn";
      note(e1);
      at = "seed " + std::to_string(seed) + "/params-sr";
      note(e2);
      at = "seed " + std::to_string(seed) + "/params-sc";
      note(e3);
      at = "seed " + std::to_string(seed) + "/params-discr";
      note(e4);
      break;
    }
    if (worst >= tol) break;
  }
  } catch (const std::exception& e) {
    o.detail = at + ": " + e.what();
    return o;
  }
  const double elapsed = now() - t_start;
  o.pass = worst < tol && elapsed < 300.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max relative error %.3g (tolerance 1e-4) at %s; %.0f s of 300", worst,
                worst_at.c_str(), elapsed);
  o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------
// criterion 2: metric oracle equivalence

Outcome criterion2() {
  Outcome o{2, "metric oracle equivalence (500 random pairs + hand cases)"};
  const double t_start = now();
  Rng rng(20240811);
  double worst = 0.0;
  int done = 0;
  while (done < 500) {
    const int h = 4 + static_cast<int>(rng.uniform_int(0, 28));
    const int w = 4 + static_cast<int>(rng.uniform_int(0, 28));
    const double dy = rng.uniform(0.5, 3.0), dx = rng.uniform(0.5, 3.0);
    metrics::BinaryMask a = metrics::BinaryMask::make2d(h, w, dy, dx);
    metrics::BinaryMask b = metrics::BinaryMask::make2d(h, w, dy, dx);
    const double da = rng.uniform(0.05, 0.6), db = rng.uniform(0.05, 0.6);
    for (auto& v : a.m) v = rng.uniform() < da;
    for (auto& v : b.m) v = rng.uniform() < db;
    if (a.count() == 0 || b.count() == 0) continue;
    ++done;
    worst = std::max(worst, std::abs(metrics::asd(a, b) - oracles::brute_asd(a, b)));
    worst = std::max(worst, std::abs(metrics::hausdorff(a, b, metrics::HdMode::Directed) -
                                     oracles::brute_hausdorff_directed(a, b)));
    const double sym =
        std::max(oracles::brute_hausdorff_directed(a, b), oracles::brute_hausdorff_directed(b, a));
    worst = std::max(worst, std::abs(metrics::hausdorff(a, b, metrics::HdMode::Symmetric) - sym));
  }

  // hand-countable dice cases
  metrics::BinaryMask a = metrics::BinaryMask::make2d(4, 4), b = metrics::BinaryMask::make2d(4, 4);
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 2; ++x) a.set(0, y, x, true);
  for (int y = 1; y <= 2; ++y)
    for (int x = 2; x <= 3; ++x) b.set(0, y, x, true);
  const bool dice_ok = metrics::dice_binary(a, b) == 0.5 && metrics::dice_binary(a, a) == 1.0 &&
                       metrics::dice_binary(metrics::BinaryMask::make2d(4, 4), metrics::BinaryMask::make2d(4, 4)) == 1.0;

  const double elapsed = now() - t_start;
  o.pass = worst < 1e-9 && dice_ok && elapsed < 120.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max |fast - brute| = %.3g mm over 500 pairs; dice cases %s; %.0f s of 120",
                worst, dice_ok ? "exact" : "WRONG", elapsed);
  o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------
// criterion 3: loss unit values

Outcome criterion3() {
  Outcome o{3, "loss unit values (cross term, Frobenius, GAN point, CE reduction)"};
  std::vector<std::string> fails;

  {  // uniform-prediction cross term = (ln 4)^0.3
    Tensor p = Tensor::full({4, 8, 8}, 0.25);
    Rng rng(3);
    Tensor y({4, 8, 8});
    for (int i = 0; i < 64; ++i) y.data[static_cast<size_t>(rng.uniform_int(0, 3) * 64 + i)] = 1.0;
    losses::LossConfig cfg;
    const double got = losses::seg_loss(p, y, cfg).components.at("seg_cross");
    if (std::abs(got - std::pow(std::log(4.0), 0.3)) > 1e-6) fails.push_back("cross-term");
  }
  {  // Frobenius {1,2} -> 5 exact
    Tensor a({1, 1, 2, 2}), b({1, 1, 2, 2});
    a.data[0] = 1.0;
    a.data[3] = 2.0;
    if (losses::sr_loss(a, b) != 5.0) fails.push_back("frobenius");
  }
  {  // GAN symmetric point
    const Tensor half({8, 1}, std::vector<double>(8, 0.5));
    if (std::abs(losses::gan_losses(half, half).first - 2.0 * std::log(2.0)) > 1e-9)
      fails.push_back("gan-2ln2");
  }
  {  // reduction to plain cross-entropy
    Rng rng(4);
    Tensor logits({2, 4, 8, 8});
    for (auto& v : logits.data) v = rng.uniform(-2, 2);
    Tape t;
    const Tensor p = t.value(t.softmax_channels(t.constant(logits)));
    const Tensor y = random_onehot(2, 4, 8, 8, rng);
    losses::LossConfig cfg;
    cfg.gamma2 = 1.0;
    cfg.lambda_dice = 0.0;
    cfg.lambda_cross = 1.0;
    cfg.class_weights = {1, 1, 1, 1};
    if (std::abs(losses::seg_loss(p, y, cfg).total - oracles::plain_cross_entropy(p, y)) > 1e-9)
      fails.push_back("ce-reduction");
  }
  o.pass = fails.empty();
  o.detail = fails.empty() ? "all four unit values verified"
                           : "failed: " + std::accumulate(fails.begin(), fails.end(), std::string(),
                                                          [](std::string s, const std::string& f) {
                                                            return s.empty() ? f : s + ", " + f;
                                                          });
  return o;
}

// ---------------------------------------------------------------------------
// shared toy-data helpers for criteria 4-7

std::vector<phantom::LabeledVolume> make_volumes(int count, uint64_t seed, int slices = 8, int hw = 64) {
  std::vector<phantom::LabeledVolume> vols;
  for (int i = 0; i < count; ++i) {
    phantom::PhantomConfig pc;
    pc.seed = mix_seed(seed, static_cast<uint64_t>(i));
    pc.n_slices = slices;
    pc.height = hw;
    pc.width = hw;
    vols.push_back(phantom::generate_phantom(pc));
  }
  return vols;
}

train::TrainConfig lean_config() {
  train::TrainConfig cfg;
  cfg.backbone.levels = 3;
  cfg.backbone.base_channels = 8;
  cfg.sr.levels = 3;
  cfg.sr.code_channels = 32;
  return cfg;
}

// criterion 4: SR pretraining accuracy
Outcome criterion4() {
  Outcome o{4, "SR pretraining: holdout argmax accuracy > 0.98 on 200 slices"};
  const double t_start = now();
  const auto train_vols = make_volumes(25, 11001);  // 25 x 8 = 200 slices
  const auto hold_vols = make_volumes(3, 12001);    // 24 held-out slices
  const auto ds = train::dataset_from_volumes(train_vols);
  const auto hold = train::dataset_from_volumes(hold_vols);
  train::TrainConfig cfg = lean_config();
  cfg.seed = 5;
  const auto res = train::pretrain_sr(ds, &hold, cfg.sr, cfg);
  const double elapsed = now() - t_start;
  o.pass = res.heldout_accuracy > 0.98 && elapsed < 900.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "holdout accuracy %.4f on %zu slices; %.0f s of 900", res.heldout_accuracy,
                hold.size(), elapsed);
  o.detail = buf;
  return o;
}

// criterion 5: SC head position regression
Outcome criterion5() {
  Outcome o{5, "SC head: MAE < 0.1 and rank correlation > 0.9 on held-out slices"};
  const auto train_vols = make_volumes(10, 13001);
  const auto val_vols = make_volumes(3, 13501);
  const auto test_vols = make_volumes(5, 14001);
  train::TrainConfig cfg = lean_config();
  cfg.variant = Variant::SCN;
  cfg.seed = 7;
  const auto res = train::train_variant(train::dataset_from_volumes(train_vols),
                                        train::dataset_from_volumes(val_vols), cfg, nullptr);
  std::vector<double> pred, truth;
  for (const auto& v : test_vols) {
    const auto p = train::predict(res.model, v);
    for (size_t z = 0; z < p.positions.size(); ++z) {
      pred.push_back(p.positions[z]);
      truth.push_back(v.slice_positions[z]);
    }
  }
  double mae = 0;
  for (size_t i = 0; i < pred.size(); ++i) mae += std::abs(pred[i] - truth[i]);
  mae /= static_cast<double>(pred.size());
  const double rho = spearman(pred, truth);
  o.pass = mae < 0.1 && rho > 0.9;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "MAE %.4f, Spearman %.4f over %zu held-out slices", mae, rho, pred.size());
  o.detail = buf;
  return o;
}

// criterion 6: overfit sanity
Outcome criterion6() {
  Outcome o{6, "overfit: every variant reaches Dice > 0.95 on 8 slices in 300 steps"};
  const auto vols = make_volumes(1, 15001, 8);  // one volume = 8 slices = 1 batch
  const auto ds = train::dataset_from_volumes(vols);

  train::TrainConfig cfg;
  cfg.backbone.levels = 2;
  cfg.backbone.base_channels = 8;
  cfg.sr.levels = 2;
  cfg.sr.code_channels = 16;
  cfg.discr.levels = 2;
  cfg.discr.base_channels = 4;
  cfg.epochs = 300;  // one batch per epoch -> 300 steps
  cfg.gan_epochs = 300;
  cfg.batch_size = 8;
  cfg.seed = 9;

  const auto sr = train::pretrain_sr(ds, nullptr, cfg.sr, cfg);

  std::string detail;
  bool all = true;
  for (Variant v : losses::kAllVariants) {
    train::TrainConfig c = cfg;
    c.variant = v;
    const bool uses_sr = v == Variant::SRNN || v == Variant::SRSCN || v == Variant::ACNN;
    const auto res = train::train_variant(ds, {}, c, uses_sr ? &sr.params : nullptr);
    std::vector<uint8_t> pred_all, gt_all;
    for (const auto& vol : vols) {
      const auto p = train::predict(res.model, vol);
      pred_all.insert(pred_all.end(), p.labels.begin(), p.labels.end());
      gt_all.insert(gt_all.end(), vol.labels.begin(), vol.labels.end());
    }
    const double dice = train::mean_foreground_dice(pred_all, gt_all);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s %.3f ", losses::variant_id(v).c_str(), dice);
    detail += buf;
    all = all && dice > 0.95;
  }
  o.pass = all;
  o.detail = detail;
  return o;
}

// criteria 7-9 share ablation machinery

harness::RunConfig ablation_config(const fs::path& out, uint64_t master_seed) {
  harness::RunConfig cfg = harness::default_run_config();
  cfg.out_dir = out.string();
  cfg.master_seed = master_seed;
  cfg.data.train_volumes = 10;  // deliberately small training split
  cfg.data.val_volumes = 5;
  cfg.data.test_volumes = 15;
  cfg.data.phantom.n_slices = 8;
  cfg.parallel_runs = 2;
  return cfg;
}

Outcome criterion7(const fs::path& root) {
  Outcome o{7, "directional ablation over 3 master seeds (< 2 h budget)"};
  const double t0 = now();
  std::map<Variant, double> mean_dice;
  const std::vector<uint64_t> seeds = {101, 202, 303};
  for (uint64_t s : seeds) {
    const auto cfg = ablation_config(root / ("ablate_seed" + std::to_string(s)), s);
    const auto report = harness::run_ablation(cfg);
    for (const auto& m : report.methods) {
      if (m.failed) {
        o.detail = losses::variant_id(m.variant) + " failed: " + m.error;
        return o;
      }
      mean_dice[m.variant] += report.dice_aggregate(m.variant, "Mean").mean / static_cast<double>(seeds.size());
    }
  }
  const double elapsed = now() - t0;
  const double unet = mean_dice.at(Variant::UNet);
  const bool srscn_ok = mean_dice.at(Variant::SRSCN) >= unet;
  const bool scn_ok = mean_dice.at(Variant::SCN) >= unet - 0.01;
  const bool srnn_ok = mean_dice.at(Variant::SRNN) >= unet - 0.01;
  const bool time_ok = elapsed < 7200.0;
  o.pass = srscn_ok && scn_ok && srnn_ok && time_ok;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mean Dice: U-Net %.4f, SCN %.4f, SRNN %.4f, SRSCN %.4f, ACNN %.4f, GAN %.4f; %.0f s",
                unet, mean_dice.at(Variant::SCN), mean_dice.at(Variant::SRNN), mean_dice.at(Variant::SRSCN),
                mean_dice.at(Variant::ACNN), mean_dice.at(Variant::GAN), elapsed);
  o.detail = buf;
  return o;
}

Outcome criterion8(const fs::path& root, fs::path& kept_run) {
  Outcome o{8, "determinism: repeated ablate gives byte-identical report CSVs"};
  harness::RunConfig cfg = harness::default_run_config();
  cfg.master_seed = 424242;
  cfg.data.train_volumes = 3;
  cfg.data.val_volumes = 1;
  cfg.data.test_volumes = 3;
  cfg.data.phantom.n_slices = 4;
  cfg.data.phantom.height = 32;
  cfg.data.phantom.width = 32;
  cfg.training.epochs = 3;
  cfg.training.gan_epochs = 3;
  cfg.training.backbone.levels = 2;
  cfg.training.backbone.base_channels = 4;
  cfg.training.sr.levels = 2;
  cfg.training.sr.code_channels = 8;
  cfg.training.discr.levels = 2;
  cfg.training.discr.base_channels = 4;
  cfg.parallel_runs = 2;

  cfg.out_dir = (root / "det_a").string();
  harness::run_ablation(cfg);
  cfg.out_dir = (root / "det_b").string();
  harness::run_ablation(cfg);
  const bool report_same = slurp(root / "det_a" / "report.csv") == slurp(root / "det_b" / "report.csv");
  const bool cases_same = slurp(root / "det_a" / "per_case.csv") == slurp(root / "det_b" / "per_case.csv");
  o.pass = report_same && cases_same;
  o.detail = std::string("report.csv ") + (report_same ? "identical" : "DIFFERS") + ", per_case.csv " +
             (cases_same ? "identical" : "DIFFERS");
  kept_run = root / "det_a";
  return o;
}

Outcome criterion9(const fs::path& run_dir) {
  Outcome o{9, "report structure matches the reference method and metric sets"};
  std::vector<std::string> problems;

  std::ifstream in(run_dir / "report.csv");
  std::string header;
  std::getline(in, header);
  if (header.rfind("method,lv_mean,lv_sd,rv_mean,rv_sd,myo_mean,myo_sd,mean_mean,mean_sd", 0) != 0)
    problems.push_back("columns != {LV, RV, Myo, Mean} mean/sd");
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(line.substr(0, line.find(',')));
  const std::vector<std::string> expect = {"U-Net", "SCN", "SRNN", "SRSCN", "ACNN", "GAN"};
  if (rows != expect) problems.push_back("method rows differ from the reference set");

  // metric set {Dice, ASD, HD} per structure {Myo, LV, RV}
  phantom::PhantomConfig pc;
  pc.seed = 5;
  const auto v = phantom::generate_phantom(pc);
  const auto rep = metrics::evaluate_case("c", v.labels, v.labels, v.dims, v.spacing);
  if (rep.structures.size() != 3 || rep.structures[0].first != "Myo" || rep.structures[1].first != "LV" ||
      rep.structures[2].first != "RV")
    problems.push_back("structure set != {Myo, LV, RV}");
  for (const auto& [name, s] : rep.structures)
    if (!s.asd_mm || !s.hd_mm) problems.push_back(name + " missing a Dice/ASD/HD value");

  o.pass = problems.empty();
  o.detail = problems.empty()
                 ? "rows {U-Net, SCN, SRNN, SRSCN, ACNN, GAN}; columns {LV, RV, Myo, Mean}; metrics {Dice, ASD, HD}"
                 : problems.front();
  return o;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "srscn_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  std::vector<Outcome> results;
  fs::path det_run;
  const auto run = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const double t0 = now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.id = id;
      o.name = name;
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    o.seconds = now() - t0;
    std::printf("[%s] criterion %d: %s — %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str(),
                o.detail.c_str(), o.seconds);
    std::fflush(stdout);
    results.push_back(o);
  };

  run(1, "gradient correctness", criterion1);
  run(2, "metric oracle equivalence", criterion2);
  run(3, "loss unit values", criterion3);
  run(4, "SR pretraining", criterion4);
  run(5, "SC head regression", criterion5);
  run(6, "overfit sanity", criterion6);
  run(8, "determinism", [&] { return criterion8(root, det_run); });
  run(9, "report structure", [&] { return criterion9(det_run); });
  run(7, "directional ablation", [&] { return criterion7(root); });

  std::sort(results.begin(), results.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  int failures = 0;
  std::printf("\n=== acceptance summary ===\n");
  for (const auto& o : results) {
    std::printf("[%s] criterion %d: %s\n", o.pass ? "PASS" : "FAIL", o.id, o.detail.c_str());
    failures += !o.pass;
  }
  fs::remove_all(root);
  return failures;
}
