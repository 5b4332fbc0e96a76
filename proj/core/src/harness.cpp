#include "srscn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "srscn/rng.hpp"

namespace srscn::harness {

using losses::Variant;
using nlohmann::json;

namespace {

std::string fmt(double v, const char* spec = "%.15g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

json limits_to_json(const augment::Limits& l) {
  return json{{"max_rotation_deg", l.max_rotation_deg},
              {"max_translation_px", l.max_translation_px},
              {"max_scale_dev", l.max_scale_dev},
              {"max_shear", l.max_shear},
              {"max_displacement_px", l.max_displacement_px},
              {"smoothing_sigma_px", l.smoothing_sigma_px}};
}

void limits_from_json(const json& j, augment::Limits& l) {
  l.max_rotation_deg = j.value("max_rotation_deg", l.max_rotation_deg);
  l.max_translation_px = j.value("max_translation_px", l.max_translation_px);
  l.max_scale_dev = j.value("max_scale_dev", l.max_scale_dev);
  l.max_shear = j.value("max_shear", l.max_shear);
  l.max_displacement_px = j.value("max_displacement_px", l.max_displacement_px);
  l.smoothing_sigma_px = j.value("smoothing_sigma_px", l.smoothing_sigma_px);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["out_dir"] = cfg.out_dir;
  j["master_seed"] = cfg.master_seed;
  j["deterministic"] = cfg.deterministic;
  j["parallel_runs"] = cfg.parallel_runs;
  j["auto_class_weights"] = cfg.auto_class_weights;
  json vs = json::array();
  for (Variant v : cfg.variants) vs.push_back(losses::variant_id(v));
  j["variants"] = vs;

  j["data"] = {{"train_volumes", cfg.data.train_volumes},
               {"val_volumes", cfg.data.val_volumes},
               {"test_volumes", cfg.data.test_volumes},
               {"augment_per_volume", cfg.data.augment_per_volume},
               {"augment_limits", limits_to_json(cfg.data.augment_limits)},
               {"phantom",
                {{"n_slices", cfg.data.phantom.n_slices},
                 {"height", cfg.data.phantom.height},
                 {"width", cfg.data.phantom.width},
                 {"noise_sigma", cfg.data.phantom.noise_sigma},
                 {"intensity_heterogeneity", cfg.data.phantom.intensity_heterogeneity},
                 {"spacing", cfg.data.phantom.spacing}}}};
  if (cfg.data.volumes_dir) j["data"]["volumes_dir"] = *cfg.data.volumes_dir;

  const auto& t = cfg.training;
  j["training"] = {{"epochs", t.epochs},
                   {"gan_epochs", t.gan_epochs},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"sr_cap_ratio", t.sr_cap_ratio},
                   {"sc_hidden", t.sc_hidden},
                   {"backbone",
                    {{"levels", t.backbone.levels},
                     {"base_channels", t.backbone.base_channels},
                     {"in_channels", t.backbone.in_channels},
                     {"out_classes", t.backbone.out_classes}}},
                   {"sr", {{"levels", t.sr.levels}, {"code_channels", t.sr.code_channels}, {"classes", t.sr.classes}}},
                   {"discr",
                    {{"levels", t.discr.levels},
                     {"base_channels", t.discr.base_channels},
                     {"in_channels", t.discr.in_channels},
                     {"hidden", t.discr.hidden}}}};
  const auto& l = t.loss;
  j["loss"] = {{"lambda_dice", l.lambda_dice}, {"lambda_cross", l.lambda_cross},
               {"gamma1", l.gamma1},           {"gamma2", l.gamma2},
               {"class_weights", l.class_weights}, {"lambda_sr", l.lambda_sr},
               {"lambda_sc", l.lambda_sc},     {"lambda_adv", l.lambda_adv},
               {"eps_clamp", l.eps_clamp},     {"dice_smooth", l.dice_smooth}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg = default_run_config();
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  cfg.deterministic = j.value("deterministic", cfg.deterministic);
  cfg.parallel_runs = j.value("parallel_runs", cfg.parallel_runs);
  cfg.auto_class_weights = j.value("auto_class_weights", cfg.auto_class_weights);
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& v : j.at("variants")) cfg.variants.push_back(losses::parse_variant(v.get<std::string>()));
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    cfg.data.train_volumes = d.value("train_volumes", cfg.data.train_volumes);
    cfg.data.val_volumes = d.value("val_volumes", cfg.data.val_volumes);
    cfg.data.test_volumes = d.value("test_volumes", cfg.data.test_volumes);
    cfg.data.augment_per_volume = d.value("augment_per_volume", cfg.data.augment_per_volume);
    if (d.contains("augment_limits")) limits_from_json(d.at("augment_limits"), cfg.data.augment_limits);
    if (d.contains("volumes_dir")) cfg.data.volumes_dir = d.at("volumes_dir").get<std::string>();
    if (d.contains("phantom")) {
      const json& p = d.at("phantom");
      cfg.data.phantom.n_slices = p.value("n_slices", cfg.data.phantom.n_slices);
      cfg.data.phantom.height = p.value("height", cfg.data.phantom.height);
      cfg.data.phantom.width = p.value("width", cfg.data.phantom.width);
      cfg.data.phantom.noise_sigma = p.value("noise_sigma", cfg.data.phantom.noise_sigma);
      cfg.data.phantom.intensity_heterogeneity =
          p.value("intensity_heterogeneity", cfg.data.phantom.intensity_heterogeneity);
      if (p.contains("spacing")) {
        const auto sp = p.at("spacing").get<std::vector<double>>();
        if (sp.size() != 3) throw ConfigError("run config: phantom.spacing must have 3 entries");
        std::copy(sp.begin(), sp.end(), cfg.data.phantom.spacing.begin());
      }
    }
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    cfg.training.epochs = t.value("epochs", cfg.training.epochs);
    cfg.training.gan_epochs = t.value("gan_epochs", cfg.training.gan_epochs);
    cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
    cfg.training.learning_rate = t.value("learning_rate", cfg.training.learning_rate);
    cfg.training.sr_cap_ratio = t.value("sr_cap_ratio", cfg.training.sr_cap_ratio);
    cfg.training.sc_hidden = t.value("sc_hidden", cfg.training.sc_hidden);
    if (t.contains("backbone")) {
      const json& b = t.at("backbone");
      cfg.training.backbone.levels = b.value("levels", cfg.training.backbone.levels);
      cfg.training.backbone.base_channels = b.value("base_channels", cfg.training.backbone.base_channels);
      cfg.training.backbone.in_channels = b.value("in_channels", cfg.training.backbone.in_channels);
      cfg.training.backbone.out_classes = b.value("out_classes", cfg.training.backbone.out_classes);
    }
    if (t.contains("sr")) {
      const json& s = t.at("sr");
      cfg.training.sr.levels = s.value("levels", cfg.training.sr.levels);
      cfg.training.sr.code_channels = s.value("code_channels", cfg.training.sr.code_channels);
      cfg.training.sr.classes = s.value("classes", cfg.training.sr.classes);
    }
    if (t.contains("discr")) {
      const json& dsc = t.at("discr");
      cfg.training.discr.levels = dsc.value("levels", cfg.training.discr.levels);
      cfg.training.discr.base_channels = dsc.value("base_channels", cfg.training.discr.base_channels);
      cfg.training.discr.in_channels = dsc.value("in_channels", cfg.training.discr.in_channels);
      cfg.training.discr.hidden = dsc.value("hidden", cfg.training.discr.hidden);
    }
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    auto& c = cfg.training.loss;
    c.lambda_dice = l.value("lambda_dice", c.lambda_dice);
    c.lambda_cross = l.value("lambda_cross", c.lambda_cross);
    c.gamma1 = l.value("gamma1", c.gamma1);
    c.gamma2 = l.value("gamma2", c.gamma2);
    c.lambda_sr = l.value("lambda_sr", c.lambda_sr);
    c.lambda_sc = l.value("lambda_sc", c.lambda_sc);
    c.lambda_adv = l.value("lambda_adv", c.lambda_adv);
    c.eps_clamp = l.value("eps_clamp", c.eps_clamp);
    c.dice_smooth = l.value("dice_smooth", c.dice_smooth);
    if (l.contains("class_weights")) {
      const auto cw = l.at("class_weights").get<std::vector<double>>();
      if (cw.size() != 4) throw ConfigError("run config: loss.class_weights must have 4 entries");
      std::copy(cw.begin(), cw.end(), c.class_weights.begin());
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<phantom::LabeledVolume> load_volume_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".svol") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<phantom::LabeledVolume> vols;
  for (const auto& f : files) vols.push_back(phantom::read_volume(f));
  return vols;
}

}  // namespace

void RunConfig::validate() const {
  if (variants.empty()) throw ConfigError("run config: variant list is empty");
  if (data.train_volumes < 1 || data.val_volumes < 0 || data.test_volumes < 1)
    throw ConfigError("run config: need >= 1 training and >= 1 test volume");
  if (data.augment_per_volume < 0) throw ConfigError("run config: augment_per_volume must be >= 0");
  if (parallel_runs < 1) throw ConfigError("run config: parallel_runs must be >= 1");
  data.phantom.validate();
  training.validate();
}

RunConfig default_run_config() {
  RunConfig cfg;
  // Desk-scale defaults: the full pyramid depth of the paper-scale nets is
  // unnecessary on 64x64 phantoms and would push a CPU-only ablation past
  // its runtime budget.
  cfg.training.backbone.levels = 3;
  cfg.training.backbone.base_channels = 8;
  cfg.training.sr.levels = 3;
  cfg.training.sr.code_channels = 32;
  return cfg;
}

RunConfig load_run_config(const std::string& path_or_default) {
  if (path_or_default == "default") return default_run_config();
  std::ifstream in(path_or_default);
  if (!in) throw ConfigError("run config: cannot open " + path_or_default);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("run config: cannot write " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.n = static_cast<int>(xs.size());
  if (a.n == 0) return a;
  for (double x : xs) a.mean += x;
  a.mean /= a.n;
  if (a.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(ss / (a.n - 1));
  }
  return a;
}

const MethodResult& AblationReport::method(Variant v) const {
  for (const auto& m : methods)
    if (m.variant == v) return m;
  throw Error("ablation report: no result for " + losses::variant_id(v));
}

Aggregate AblationReport::dice_aggregate(Variant v, const std::string& column) const {
  const MethodResult& m = method(v);
  std::vector<double> xs;
  if (column == "Mean") {
    xs = m.case_mean_dice;
  } else {
    for (const auto& c : m.cases) xs.push_back(c.of(column).dice);
  }
  return aggregate(xs);
}

SplitVolumes build_split(const RunConfig& cfg) {
  cfg.validate();
  SplitVolumes sv;
  std::vector<phantom::LabeledVolume> all;
  const int total = cfg.data.train_volumes + cfg.data.val_volumes + cfg.data.test_volumes;
  if (cfg.data.volumes_dir) {
    all = load_volume_dir(*cfg.data.volumes_dir);
    if (static_cast<int>(all.size()) < total)
      throw ConfigError("run config: volumes_dir holds " + std::to_string(all.size()) +
                        " volumes, need " + std::to_string(total));
    all.resize(static_cast<size_t>(total));
  } else {
    for (int i = 0; i < total; ++i) {
      phantom::PhantomConfig pc = cfg.data.phantom;
      pc.seed = mix_seed(cfg.master_seed, "phantom_" + std::to_string(i));
      all.push_back(phantom::generate_phantom(pc));
    }
  }
  auto take = [&](int count) {
    std::vector<phantom::LabeledVolume> out(all.begin(), all.begin() + count);
    all.erase(all.begin(), all.begin() + count);
    return out;
  };
  sv.train = take(cfg.data.train_volumes);
  sv.val = take(cfg.data.val_volumes);
  sv.test = take(cfg.data.test_volumes);

  const size_t originals = sv.train.size();
  for (size_t i = 0; i < originals; ++i)
    for (int k = 0; k < cfg.data.augment_per_volume; ++k)
      sv.train.push_back(augment::augment_volume(
          sv.train[i], mix_seed(cfg.master_seed, "augment_" + std::to_string(i) + "_" + std::to_string(k)),
          cfg.data.augment_limits));
  return sv;
}

void write_report_csv(const std::filesystem::path& path, const AblationReport& report,
                      const std::vector<Variant>& variants) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_report_csv: cannot open " + path.string());
  out << "method,lv_mean,lv_sd,rv_mean,rv_sd,myo_mean,myo_sd,mean_mean,mean_sd,cases,flags\n";
  for (Variant v : variants) {
    const MethodResult& m = report.method(v);
    out << losses::variant_label(v);
    if (m.failed) {
      out << ",,,,,,,,,0,failed:" << m.error << "\n";
      continue;
    }
    int flagged = 0;
    for (const auto& c : m.cases)
      for (const auto& [_, s] : c.structures) flagged += !s.flags.empty();
    for (const char* col : {"LV", "RV", "Myo", "Mean"}) {
      const Aggregate a = report.dice_aggregate(v, col);
      out << "," << fmt(a.mean) << "," << fmt(a.sd);
    }
    out << "," << m.cases.size() << "," << (flagged ? "undefined_distances:" + std::to_string(flagged) : "")
        << "\n";
  }
}

void write_report_table(const std::filesystem::path& path, const AblationReport& report,
                        const std::vector<Variant>& variants) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_report_table: cannot open " + path.string());
  out << "Methods\tLV\tRV\tMyo\tMean\n";
  for (Variant v : variants) {
    const MethodResult& m = report.method(v);
    out << losses::variant_label(v);
    if (m.failed) {
      out << "\tfailed\tfailed\tfailed\tfailed\n";
      continue;
    }
    for (const char* col : {"LV", "RV", "Myo", "Mean"}) {
      const Aggregate a = report.dice_aggregate(v, col);
      out << "\t" << fmt(a.mean, "%.3f") << "±" << fmt(a.sd, "%.3f");
    }
    out << "\n";
  }
}

void write_per_case_csv(const std::filesystem::path& path, const AblationReport& report,
                        const std::vector<Variant>& variants) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_per_case_csv: cannot open " + path.string());
  out << "method,case_id,structure,dice,asd_mm,hd_mm,flags\n";
  for (Variant v : variants) {
    const MethodResult& m = report.method(v);
    if (m.failed) continue;
    for (const auto& c : m.cases)
      for (const auto& [name, s] : c.structures) {
        out << losses::variant_label(v) << "," << c.case_id << "," << name << "," << fmt(s.dice);
        out << "," << (s.asd_mm ? fmt(*s.asd_mm) : "") << "," << (s.hd_mm ? fmt(*s.hd_mm) : "");
        out << "," << s.flags << "\n";
      }
  }
}

AblationReport run_ablation(const RunConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  save_run_config(cfg, out_dir / "run_config.json");

  const SplitVolumes sv = build_split(cfg);
  const train::SliceDataset train_ds = train::dataset_from_volumes(sv.train);
  const train::SliceDataset val_ds = sv.val.empty() ? train::SliceDataset{} : train::dataset_from_volumes(sv.val);

  train::TrainConfig base = cfg.training;
  if (cfg.auto_class_weights) {
    std::vector<const std::vector<uint8_t>*> grids;
    for (const auto& v : sv.train) grids.push_back(&v.labels);
    base.loss.class_weights = losses::frequency_class_weights(grids);
  }

  // One SR pretraining shared by every variant that needs it.
  const bool needs_sr = std::any_of(cfg.variants.begin(), cfg.variants.end(), [](Variant v) {
    return v == Variant::SRNN || v == Variant::SRSCN || v == Variant::ACNN;
  });
  nets::Params sr_params;
  if (needs_sr) {
    train::TrainConfig sr_cfg = base;
    sr_cfg.seed = mix_seed(cfg.master_seed, "sr_pretrain");
    const train::PretrainResult pre = train::pretrain_sr(train_ds, val_ds.empty() ? nullptr : &val_ds,
                                                         base.sr, sr_cfg);
    sr_params = pre.params;
    train::save_sr_checkpoint(out_dir / "sr.ckpt", base.sr, sr_params);
    train::write_history_csv(out_dir / "sr_history.csv", pre.history);
  }

  AblationReport report;
  report.methods.resize(cfg.variants.size());

  auto run_one = [&](size_t vi) {
    const Variant v = cfg.variants[vi];
    MethodResult& mr = report.methods[vi];
    mr.variant = v;
    try {
      train::TrainConfig tc = base;
      tc.variant = v;
      tc.seed = mix_seed(cfg.master_seed, "train_" + losses::variant_id(v));
      const bool uses_sr = v == Variant::SRNN || v == Variant::SRSCN || v == Variant::ACNN;
      const train::TrainResult tr = train::train_variant(train_ds, val_ds, tc, uses_sr ? &sr_params : nullptr);

      const fs::path mdir = out_dir / losses::variant_id(v);
      fs::create_directories(mdir);
      train::save_model(mdir / "model.ckpt", tr.model, {{"variant", losses::variant_id(v)}});
      train::write_history_csv(mdir / "history.csv", tr.history);
      mr.history = tr.history;

      std::vector<metrics::MetricsReport> reports;
      for (size_t ci = 0; ci < sv.test.size(); ++ci) {
        const auto& vol = sv.test[ci];
        const train::Prediction pred = train::predict(tr.model, vol);
        char cid[32];
        std::snprintf(cid, sizeof(cid), "case_%03zu", ci);
        reports.push_back(metrics::evaluate_case(cid, pred.labels, vol.labels, vol.dims, vol.spacing));
        double mean3 = 0.0;
        for (const auto& [_, s] : reports.back().structures) mean3 += s.dice;
        mr.case_mean_dice.push_back(mean3 / static_cast<double>(reports.back().structures.size()));
      }
      mr.cases = std::move(reports);
      metrics::write_reports_csv(mdir / "cases.csv", mr.cases);
      metrics::write_reports_json(mdir / "cases.jsonl", mr.cases);
    } catch (const Error& e) {
      mr.failed = true;
      mr.error = e.what();
    }
  };

  // Variants are independent; run a bounded number of them concurrently.
  const size_t width = std::max<size_t>(1, static_cast<size_t>(cfg.parallel_runs));
  for (size_t start = 0; start < cfg.variants.size(); start += width) {
    std::vector<std::future<void>> wave;
    for (size_t vi = start; vi < std::min(cfg.variants.size(), start + width); ++vi)
      wave.push_back(std::async(std::launch::async, run_one, vi));
    for (auto& f : wave) f.get();
  }

  write_report_csv(out_dir / "report.csv", report, cfg.variants);
  write_report_table(out_dir / "report_table.txt", report, cfg.variants);
  write_per_case_csv(out_dir / "per_case.csv", report, cfg.variants);

  const bool any_failed = std::any_of(report.methods.begin(), report.methods.end(),
                                      [](const MethodResult& m) { return m.failed; });
  if (any_failed) {
    std::ofstream marker(out_dir / "partial.marker");
    for (const auto& m : report.methods)
      if (m.failed) marker << losses::variant_id(m.variant) << ": " << m.error << "\n";
  } else {
    std::error_code ec;
    fs::remove(out_dir / "partial.marker", ec);
  }
  return report;
}

}  // namespace srscn::harness
