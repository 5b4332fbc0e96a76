// Command-line front end: phantom generation, augmentation, SR pretraining,
// variant training, prediction, evaluation, and the ablation runner.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "srscn/harness.hpp"
#include "srscn/rng.hpp"

namespace fs = std::filesystem;
using namespace srscn;

namespace {

struct CliError {
  int code;
  std::string kind;
  std::string message;
};

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return code;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("--size must look like HxW, e.g. 64x64");
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

std::vector<fs::path> svol_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".svol") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .svol volumes in " + dir.string());
  return files;
}

// --- phantom gen -----------------------------------------------------------

int cmd_phantom_gen(uint64_t seed, int slices, const std::string& size, const std::string& out,
                    int count, double noise, double heterogeneity, const std::string& spacing) {
  phantom::PhantomConfig cfg;
  cfg.n_slices = slices;
  std::tie(cfg.height, cfg.width) = parse_size(size);
  cfg.noise_sigma = noise;
  cfg.intensity_heterogeneity = heterogeneity;
  if (!spacing.empty()) {
    std::istringstream ss(spacing);
    std::string tok;
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(ss, tok, ',')) throw ConfigError("--spacing must be dz,dy,dx");
      cfg.spacing[static_cast<size_t>(i)] = std::stod(tok);
    }
  }
  fs::create_directories(out);
  for (int i = 0; i < count; ++i) {
    cfg.seed = count == 1 ? seed : mix_seed(seed, static_cast<uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "vol_%03d.svol", i);
    phantom::write_volume(phantom::generate_phantom(cfg), fs::path(out) / name);
  }
  std::cout << "wrote " << count << " volume(s) to " << out << "\n";
  return 0;
}

// --- augment ---------------------------------------------------------------

int cmd_augment(const std::string& in, const std::string& out, int per_volume, uint64_t seed,
                const augment::Limits& limits) {
  fs::create_directories(out);
  int written = 0;
  const auto files = svol_files(in);
  for (size_t fi = 0; fi < files.size(); ++fi) {
    const auto v = phantom::read_volume(files[fi]);
    for (int k = 0; k < per_volume; ++k) {
      const auto a = augment::augment_volume(
          v, mix_seed(seed, std::to_string(fi) + "_" + std::to_string(k)), limits);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_aug%02d.svol", files[fi].stem().string().c_str(), k);
      phantom::write_volume(a, fs::path(out) / name);
      ++written;
    }
  }
  std::cout << "wrote " << written << " augmented volume(s) to " << out << "\n";
  return 0;
}

// --- pretrain-sr -----------------------------------------------------------

int cmd_pretrain_sr(const std::string& data, const std::string& holdout, const std::string& out,
                    train::TrainConfig cfg) {
  std::vector<phantom::LabeledVolume> vols;
  for (const auto& f : svol_files(data)) vols.push_back(phantom::read_volume(f));
  const auto ds = train::dataset_from_volumes(vols);

  train::SliceDataset hds;
  if (!holdout.empty()) {
    std::vector<phantom::LabeledVolume> hv;
    for (const auto& f : svol_files(holdout)) hv.push_back(phantom::read_volume(f));
    hds = train::dataset_from_volumes(hv);
  }
  const auto res = train::pretrain_sr(ds, hds.empty() ? nullptr : &hds, cfg.sr, cfg);
  train::save_sr_checkpoint(out, cfg.sr, res.params);
  const fs::path hist = fs::path(out).parent_path() / (fs::path(out).stem().string() + "_history.csv");
  train::write_history_csv(hist, res.history);
  std::cout << "final train loss " << res.history.epochs.back().train_total;
  if (res.heldout_accuracy >= 0) std::cout << ", holdout argmax accuracy " << res.heldout_accuracy;
  std::cout << "\nsaved " << out << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

int cmd_train(const std::string& variant, const std::string& data, const std::string& val,
              const std::string& out, const std::string& sr_ckpt, train::TrainConfig cfg) {
  cfg.variant = losses::parse_variant(variant);

  std::vector<phantom::LabeledVolume> vols;
  for (const auto& f : svol_files(data)) vols.push_back(phantom::read_volume(f));
  const auto ds = train::dataset_from_volumes(vols);

  train::SliceDataset vds;
  if (!val.empty()) {
    std::vector<phantom::LabeledVolume> vv;
    for (const auto& f : svol_files(val)) vv.push_back(phantom::read_volume(f));
    vds = train::dataset_from_volumes(vv);
  }

  std::optional<std::pair<nets::SRSpec, nets::Params>> sr;
  const bool needs_sr = cfg.variant == losses::Variant::SRNN || cfg.variant == losses::Variant::SRSCN ||
                        cfg.variant == losses::Variant::ACNN;
  if (!sr_ckpt.empty()) {
    sr = train::load_sr_checkpoint(sr_ckpt);
    cfg.sr = sr->first;
  } else if (needs_sr) {
    throw ConfigError("variant " + variant + " requires --sr-checkpoint");
  }

  const auto res = train::train_variant(ds, vds, cfg, sr ? &sr->second : nullptr);
  fs::create_directories(out);
  train::save_model(fs::path(out) / "model.ckpt", res.model, {{"variant", losses::variant_id(cfg.variant)}});
  train::write_history_csv(fs::path(out) / "history.csv", res.history);
  std::cout << "best epoch " << res.history.best_epoch << ", final val mean Dice "
            << (res.history.epochs.empty() ? 0.0 : res.history.epochs.back().val_mean_dice) << "\n";
  std::cout << "saved " << (fs::path(out) / "model.ckpt").string() << "\n";
  return 0;
}

// --- predict ---------------------------------------------------------------

int cmd_predict(const std::string& model_path, const std::string& in, const std::string& out,
                const std::string& positions_csv) {
  const train::Model model = train::load_model(model_path);
  const auto vol = phantom::read_volume(in);
  const train::Prediction pred = train::predict(model, vol);

  phantom::LabeledVolume pv = vol;
  pv.labels = pred.labels;
  phantom::write_volume(pv, out);
  if (!positions_csv.empty()) {
    std::ofstream ps(positions_csv);
    ps << "slice,predicted_position,true_position\n";
    for (size_t z = 0; z < vol.slice_positions.size(); ++z) {
      ps << z << ",";
      if (z < pred.positions.size()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.12g", pred.positions[z]);
        ps << buf;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.12g", vol.slice_positions[z]);
      ps << "," << buf << "\n";
    }
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& out_csv,
             const std::string& out_json) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(pred) != fs::is_directory(gt))
    throw ConfigError("eval: --pred and --gt must both be files or both directories");
  if (fs::is_directory(pred)) {
    const auto pf = svol_files(pred), gf = svol_files(gt);
    if (pf.size() != gf.size()) throw ConfigError("eval: directories hold different volume counts");
    for (size_t i = 0; i < pf.size(); ++i) pairs.emplace_back(pf[i], gf[i]);
  } else {
    pairs.emplace_back(pred, gt);
  }

  std::vector<metrics::MetricsReport> reports;
  for (const auto& [pp, gp] : pairs) {
    const auto pv = phantom::read_volume(pp);
    const auto gv = phantom::read_volume(gp);
    if (pv.dims != gv.dims) throw ShapeError("eval: volume dims differ for " + pp.string());
    reports.push_back(metrics::evaluate_case(pp.stem().string(), pv.labels, gv.labels, gv.dims, gv.spacing));
  }
  if (!out_csv.empty()) metrics::write_reports_csv(out_csv, reports);
  if (!out_json.empty()) metrics::write_reports_json(out_json, reports);

  for (const auto& r : reports) {
    std::cout << r.case_id;
    for (const auto& [name, s] : r.structures) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "  %s dice=%.4f", name.c_str(), s.dice);
      std::cout << buf;
      if (s.asd_mm) {
        std::snprintf(buf, sizeof(buf), " asd=%.3fmm hd=%.3fmm", *s.asd_mm, *s.hd_mm);
        std::cout << buf;
      } else {
        std::cout << " [" << s.flags << "]";
      }
    }
    std::cout << "\n";
  }
  return 0;
}

// --- ablate ----------------------------------------------------------------

int cmd_ablate(const std::string& config, const std::string& out, std::optional<uint64_t> seed,
               std::optional<int> parallel) {
  harness::RunConfig cfg = harness::load_run_config(config);
  if (!out.empty()) cfg.out_dir = out;
  if (seed) cfg.master_seed = *seed;
  if (parallel) cfg.parallel_runs = *parallel;
  const harness::AblationReport report = harness::run_ablation(cfg);

  std::cout << "method          LV      RV      Myo     Mean\n";
  bool any_failed = false;
  for (const auto& m : report.methods) {
    char line[160];
    if (m.failed) {
      std::snprintf(line, sizeof(line), "%-12s failed: %s", losses::variant_label(m.variant).c_str(),
                    m.error.c_str());
      any_failed = true;
    } else {
      std::snprintf(line, sizeof(line), "%-12s %.3f   %.3f   %.3f   %.3f",
                    losses::variant_label(m.variant).c_str(),
                    report.dice_aggregate(m.variant, "LV").mean, report.dice_aggregate(m.variant, "RV").mean,
                    report.dice_aggregate(m.variant, "Myo").mean,
                    report.dice_aggregate(m.variant, "Mean").mean);
    }
    std::cout << line << "\n";
  }
  std::cout << "artifacts in " << cfg.out_dir << "\n";
  return any_failed ? 6 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape-reconstruction + spatial-constraint regularized segmentation at phantom scale"};
  app.require_subcommand(1);

  // phantom gen
  auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic cardiac phantom tools");
  phantom_cmd->require_subcommand(1);
  auto* gen = phantom_cmd->add_subcommand("gen", "Generate labeled phantom volumes");
  uint64_t g_seed = 0;
  int g_slices = 10, g_count = 1;
  std::string g_size = "64x64", g_out = "phantoms", g_spacing;
  double g_noise = 0.3, g_het = 0.6;
  gen->add_option("--seed", g_seed, "Master seed");
  gen->add_option("--slices", g_slices, "Slices per volume");
  gen->add_option("--size", g_size, "Slice size HxW");
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--count", g_count, "Number of volumes");
  gen->add_option("--noise", g_noise, "Gaussian noise sigma");
  gen->add_option("--heterogeneity", g_het, "Myocardium patchiness in [0,1]");
  gen->add_option("--spacing", g_spacing, "Voxel spacing dz,dy,dx in mm");

  // augment
  auto* aug = app.add_subcommand("augment", "Write augmented copies of a volume directory");
  std::string a_in, a_out;
  int a_per = 2;
  uint64_t a_seed = 0;
  augment::Limits a_limits;
  aug->add_option("--in", a_in, "Input directory")->required();
  aug->add_option("--out", a_out, "Output directory")->required();
  aug->add_option("--per-volume", a_per, "Augmented copies per volume");
  aug->add_option("--seed", a_seed, "Seed");
  aug->add_option("--max-rotation", a_limits.max_rotation_deg, "Max rotation (degrees)");
  aug->add_option("--max-translation", a_limits.max_translation_px, "Max translation (px)");
  aug->add_option("--max-scale-dev", a_limits.max_scale_dev, "Max scale deviation");
  aug->add_option("--max-shear", a_limits.max_shear, "Max shear");
  aug->add_option("--max-displacement", a_limits.max_displacement_px, "Max deformable displacement (px)");
  aug->add_option("--smoothing-sigma", a_limits.smoothing_sigma_px, "Deformation smoothing sigma (px)");

  // shared training knobs
  auto add_train_opts = [](CLI::App* cmd, train::TrainConfig& cfg) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs");
    cmd->add_option("--gan-epochs", cfg.gan_epochs, "GAN training epochs");
    cmd->add_option("--batch", cfg.batch_size, "Mini-batch size");
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate");
    cmd->add_option("--seed", cfg.seed, "Seed");
    cmd->add_option("--levels", cfg.backbone.levels, "Backbone levels");
    cmd->add_option("--base-channels", cfg.backbone.base_channels, "Backbone base channels");
    cmd->add_option("--sr-levels", cfg.sr.levels, "SR encoder levels");
    cmd->add_option("--sr-code-channels", cfg.sr.code_channels, "SR code channels");
  };

  // pretrain-sr
  auto* pre = app.add_subcommand("pretrain-sr", "Pretrain the label autoencoder");
  std::string p_data, p_holdout, p_out = "sr.ckpt";
  train::TrainConfig p_cfg;
  pre->add_option("--data", p_data, "Training volume directory")->required();
  pre->add_option("--holdout", p_holdout, "Held-out volume directory (accuracy report)");
  pre->add_option("--out", p_out, "Checkpoint path");
  add_train_opts(pre, p_cfg);

  // train
  auto* tr = app.add_subcommand("train", "Train one variant");
  std::string t_variant, t_data, t_val, t_out = "run", t_sr, t_config;
  train::TrainConfig t_cfg;
  tr->add_option("--variant", t_variant, "UNET|SCN|SRNN|SRSCN|ACNN|GAN")->required();
  tr->add_option("--data", t_data, "Training volume directory")->required();
  tr->add_option("--val", t_val, "Validation volume directory");
  tr->add_option("--out", t_out, "Output directory");
  tr->add_option("--sr-checkpoint", t_sr, "Pretrained SR checkpoint (SRNN/SRSCN/ACNN)");
  tr->add_option("--config", t_config, "Run-config JSON supplying training and loss settings");
  add_train_opts(tr, t_cfg);

  // predict
  auto* pr = app.add_subcommand("predict", "Segment a volume with a trained model");
  std::string r_model, r_in, r_out = "pred.svol", r_positions;
  pr->add_option("--model", r_model, "Model checkpoint")->required();
  pr->add_option("--in", r_in, "Input volume")->required();
  pr->add_option("--out", r_out, "Predicted-label volume");
  pr->add_option("--positions", r_positions, "Per-slice predicted positions CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Dice/ASD/HD report for predictions vs gold standard");
  std::string e_pred, e_gt, e_csv, e_json;
  ev->add_option("--pred", e_pred, "Predicted volume or directory")->required();
  ev->add_option("--gt", e_gt, "Gold-standard volume or directory")->required();
  ev->add_option("--out-csv", e_csv, "Per-(case,structure) CSV");
  ev->add_option("--out-json", e_json, "Per-case JSON lines");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate all configured variants");
  std::string b_config = "default", b_out;
  std::optional<uint64_t> b_seed;
  std::optional<int> b_parallel;
  ab->add_option("--config", b_config, "Run-config JSON path or 'default'");
  ab->add_option("--out", b_out, "Output directory override");
  ab->add_option("--seed", b_seed, "Master seed override");
  ab->add_option("--parallel", b_parallel, "Concurrent training runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_phantom_gen(g_seed, g_slices, g_size, g_out, g_count, g_noise, g_het, g_spacing);
    if (aug->parsed()) return cmd_augment(a_in, a_out, a_per, a_seed, a_limits);
    if (pre->parsed()) return cmd_pretrain_sr(p_data, p_holdout, p_out, p_cfg);
    if (tr->parsed()) {
      if (!t_config.empty()) {
        const harness::RunConfig rc = harness::load_run_config(t_config);
        train::TrainConfig merged = rc.training;
        // explicit flags win over the config file
        merged.epochs = tr->count("--epochs") ? t_cfg.epochs : merged.epochs;
        merged.gan_epochs = tr->count("--gan-epochs") ? t_cfg.gan_epochs : merged.gan_epochs;
        merged.batch_size = tr->count("--batch") ? t_cfg.batch_size : merged.batch_size;
        merged.learning_rate = tr->count("--lr") ? t_cfg.learning_rate : merged.learning_rate;
        merged.seed = tr->count("--seed") ? t_cfg.seed : merged.seed;
        merged.backbone.levels = tr->count("--levels") ? t_cfg.backbone.levels : merged.backbone.levels;
        merged.backbone.base_channels =
            tr->count("--base-channels") ? t_cfg.backbone.base_channels : merged.backbone.base_channels;
        merged.sr.levels = tr->count("--sr-levels") ? t_cfg.sr.levels : merged.sr.levels;
        merged.sr.code_channels =
            tr->count("--sr-code-channels") ? t_cfg.sr.code_channels : merged.sr.code_channels;
        t_cfg = merged;
      }
      return cmd_train(t_variant, t_data, t_val, t_out, t_sr, t_cfg);
    }
    if (pr->parsed()) return cmd_predict(r_model, r_in, r_out, r_positions);
    if (ev->parsed()) return cmd_eval(e_pred, e_gt, e_csv, e_json);
    if (ab->parsed()) return cmd_ablate(b_config, b_out, b_seed, b_parallel);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 4);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 5);
  } catch (const TrainingError& e) {
    return fail("training", e.what(), 6);
  } catch (const UndefinedMetricError& e) {
    return fail("metric", e.what(), 7);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
