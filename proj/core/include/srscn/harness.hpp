#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "srscn/augment.hpp"
#include "srscn/metrics.hpp"
#include "srscn/train.hpp"

namespace srscn::harness {

struct DataConfig {
  int train_volumes = 25;  // §-style 25/5/15 split at phantom scale
  int val_volumes = 5;
  int test_volumes = 15;
  phantom::PhantomConfig phantom;        // per-volume seeds derive from the master seed
  std::optional<std::string> volumes_dir;  // read .svol files instead of generating
  int augment_per_volume = 0;            // extra augmented copies of each training volume
  augment::Limits augment_limits;
};

struct RunConfig {
  std::string out_dir = "runs/ablation";
  uint64_t master_seed = 17;
  bool deterministic = true;
  std::vector<losses::Variant> variants{losses::kAllVariants.begin(), losses::kAllVariants.end()};
  DataConfig data;
  train::TrainConfig training;  // template; variant and seed are set per run
  bool auto_class_weights = true;
  int parallel_runs = 2;

  void validate() const;
};

RunConfig default_run_config();
/// Accepts a JSON file path or the literal "default".
RunConfig load_run_config(const std::string& path_or_default);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

struct MethodResult {
  losses::Variant variant = losses::Variant::UNet;
  bool failed = false;
  std::string error;
  std::vector<metrics::MetricsReport> cases;
  std::vector<double> case_mean_dice;  // per case, mean of the three structure Dice
  train::TrainHistory history;
};

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, n-1
  int n = 0;
};
Aggregate aggregate(const std::vector<double>& xs);

struct AblationReport {
  std::vector<MethodResult> methods;

  const MethodResult& method(losses::Variant v) const;
  /// Dice aggregate for one structure ("LV", "RV", "Myo") or "Mean".
  Aggregate dice_aggregate(losses::Variant v, const std::string& column) const;
};

/// Trains every configured variant on identical data and splits, evaluates
/// the test split, and writes report.csv, report_table.txt, per_case.csv,
/// checkpoints, and histories under cfg.out_dir. A failed variant leaves a
/// partial.marker file and a failed row instead of aborting the others.
AblationReport run_ablation(const RunConfig& cfg);

/// Data exactly as run_ablation builds it, for reuse by tests and tools.
struct SplitVolumes {
  std::vector<phantom::LabeledVolume> train, val, test;
};
SplitVolumes build_split(const RunConfig& cfg);

void write_report_csv(const std::filesystem::path& path, const AblationReport& report,
                      const std::vector<losses::Variant>& variants);
void write_report_table(const std::filesystem::path& path, const AblationReport& report,
                        const std::vector<losses::Variant>& variants);
void write_per_case_csv(const std::filesystem::path& path, const AblationReport& report,
                        const std::vector<losses::Variant>& variants);

}  // namespace srscn::harness
