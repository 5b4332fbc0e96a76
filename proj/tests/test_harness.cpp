#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "srscn/harness.hpp"

using namespace srscn;
using losses::Variant;

namespace {

namespace fs = std::filesystem;

harness::RunConfig tiny_run_config(const fs::path& out_dir) {
  harness::RunConfig cfg = harness::default_run_config();
  cfg.out_dir = out_dir.string();
  cfg.master_seed = 404;
  cfg.variants = {Variant::UNet};
  cfg.data.train_volumes = 2;
  cfg.data.val_volumes = 1;
  cfg.data.test_volumes = 2;
  cfg.data.phantom.n_slices = 4;
  cfg.data.phantom.height = 32;
  cfg.data.phantom.width = 32;
  cfg.training.epochs = 2;
  cfg.training.gan_epochs = 2;
  cfg.training.backbone.levels = 2;
  cfg.training.backbone.base_channels = 4;
  cfg.training.sr.levels = 2;
  cfg.training.sr.code_channels = 8;
  cfg.training.discr.levels = 2;
  cfg.training.discr.base_channels = 4;
  cfg.parallel_runs = 1;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("aggregate computes mean and n-1 standard deviation") {
  const auto a = harness::aggregate({1.0, 2.0, 3.0});
  CHECK(a.mean == 2.0);
  CHECK(a.sd == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.n == 3);
  CHECK(harness::aggregate({5.0}).sd == 0.0);
  CHECK(harness::aggregate({}).n == 0);
}

TEST_CASE("run config round trips through json") {
  const auto dir = fs::temp_directory_path() / "srscn_harness_cfg";
  fs::create_directories(dir);
  harness::RunConfig cfg = tiny_run_config(dir / "out");
  cfg.data.augment_per_volume = 3;
  cfg.training.loss.lambda_sr = 1e-3;
  const auto p1 = dir / "a.json", p2 = dir / "b.json";
  harness::save_run_config(cfg, p1);
  const harness::RunConfig loaded = harness::load_run_config(p1.string());
  harness::save_run_config(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(loaded.data.augment_per_volume == 3);
  CHECK(loaded.training.loss.lambda_sr == 1e-3);
  CHECK(loaded.variants == cfg.variants);
  fs::remove_all(dir);
}

TEST_CASE("the literal 'default' names the built-in config") {
  const harness::RunConfig cfg = harness::load_run_config("default");
  CHECK(cfg.data.train_volumes == 25);
  CHECK(cfg.data.val_volumes == 5);
  CHECK(cfg.data.test_volumes == 15);
  CHECK(cfg.variants.size() == 6);
  CHECK(cfg.training.epochs == 30);
  CHECK(cfg.training.gan_epochs == 10);
  CHECK(cfg.training.learning_rate == 0.001);
  CHECK(cfg.training.loss.lambda_sr == 5e-4);
  CHECK(cfg.training.loss.lambda_sc == 1e-6);
}

TEST_CASE("splits are sized and augmented as configured") {
  auto cfg = tiny_run_config(fs::temp_directory_path() / "unused");
  cfg.data.augment_per_volume = 2;
  const auto sv = harness::build_split(cfg);
  CHECK(sv.train.size() == 2 + 2 * 2);
  CHECK(sv.val.size() == 1);
  CHECK(sv.test.size() == 2);
  // augmented copies keep dims and label alphabet
  for (const auto& v : sv.train) {
    CHECK(v.dims == sv.test[0].dims);
    v.validate();
  }
}

TEST_CASE("single-variant ablation produces one report row and its artifacts") {
  const auto dir = fs::temp_directory_path() / "srscn_harness_run1";
  fs::remove_all(dir);
  const auto cfg = tiny_run_config(dir);
  const auto report = harness::run_ablation(cfg);

  REQUIRE(report.methods.size() == 1);
  CHECK_FALSE(report.methods[0].failed);
  CHECK(report.methods[0].cases.size() == 2);
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "report_table.txt"));
  CHECK(fs::exists(dir / "per_case.csv"));
  CHECK(fs::exists(dir / "run_config.json"));
  CHECK(fs::exists(dir / "UNET" / "model.ckpt"));
  CHECK(fs::exists(dir / "UNET" / "history.csv"));
  CHECK(fs::exists(dir / "UNET" / "cases.csv"));
  CHECK_FALSE(fs::exists(dir / "partial.marker"));

  const std::string rep = slurp(dir / "report.csv");
  CHECK(rep.rfind("method,lv_mean,lv_sd,rv_mean,rv_sd,myo_mean,myo_sd,mean_mean,mean_sd", 0) == 0);
  CHECK(rep.find("U-Net,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("report aggregates re-derive from the per-case csv within 1e-9") {
  const auto dir = fs::temp_directory_path() / "srscn_harness_run2";
  fs::remove_all(dir);
  const auto cfg = tiny_run_config(dir);
  const auto report = harness::run_ablation(cfg);

  // parse per_case.csv and recompute the Mean column aggregate
  std::ifstream in(dir / "per_case.csv");
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, std::map<std::string, double>> dice_by_case;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string method, case_id, structure, dice;
    std::getline(ss, method, ',');
    std::getline(ss, case_id, ',');
    std::getline(ss, structure, ',');
    std::getline(ss, dice, ',');
    dice_by_case[case_id][structure] = std::stod(dice);
  }
  std::vector<double> means;
  for (const auto& [_, st] : dice_by_case)
    means.push_back((st.at("Myo") + st.at("LV") + st.at("RV")) / 3.0);
  const auto expected = harness::aggregate(means);
  const auto got = report.dice_aggregate(Variant::UNet, "Mean");
  CHECK(std::abs(expected.mean - got.mean) < 1e-9);
  CHECK(std::abs(expected.sd - got.sd) < 1e-9);
  fs::remove_all(dir);
}

TEST_CASE("rerunning with one master seed yields byte-identical reports") {
  const auto d1 = fs::temp_directory_path() / "srscn_harness_det1";
  const auto d2 = fs::temp_directory_path() / "srscn_harness_det2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  auto cfg = tiny_run_config(d1);
  harness::run_ablation(cfg);
  cfg.out_dir = d2.string();
  harness::run_ablation(cfg);
  CHECK(slurp(d1 / "report.csv") == slurp(d2 / "report.csv"));
  CHECK(slurp(d1 / "per_case.csv") == slurp(d2 / "per_case.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_SUITE_END();
