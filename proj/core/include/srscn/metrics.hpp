#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "srscn/errors.hpp"

namespace srscn::metrics {

/// Boolean grid with physical spacing. nd selects face connectivity:
/// 4-neighborhood for 2D (dims[0] must be 1), 6-neighborhood for 3D.
struct BinaryMask {
  int nd = 2;
  std::array<int, 3> dims = {1, 0, 0};          // z, y, x
  std::array<double, 3> spacing = {1, 1, 1};    // dz, dy, dx in mm
  std::vector<uint8_t> m;

  static BinaryMask make2d(int h, int w, double dy = 1.0, double dx = 1.0);
  static BinaryMask make3d(int nz, int h, int w, double dz = 1.0, double dy = 1.0, double dx = 1.0);

  int64_t size() const { return static_cast<int64_t>(dims[0]) * dims[1] * dims[2]; }
  int64_t index(int z, int y, int x) const {
    return (static_cast<int64_t>(z) * dims[1] + y) * dims[2] + x;
  }
  bool at(int z, int y, int x) const { return m[static_cast<size_t>(index(z, y, x))] != 0; }
  void set(int z, int y, int x, bool v) { m[static_cast<size_t>(index(z, y, x))] = v ? 1 : 0; }
  int64_t count() const;
  void validate() const;
};

/// Foreground points with at least one face-adjacent background (or
/// off-grid) neighbor. Grid border counts as background.
struct BoundarySet {
  std::vector<std::array<int, 3>> idx;  // grid indices (z, y, x)
  std::array<double, 3> spacing = {1, 1, 1};

  std::array<double, 3> mm(size_t i) const {
    return {idx[i][0] * spacing[0], idx[i][1] * spacing[1], idx[i][2] * spacing[2]};
  }
  size_t size() const { return idx.size(); }
};

double dice_binary(const BinaryMask& a, const BinaryMask& b);  // both empty -> 1
BoundarySet extract_boundary(const BinaryMask& m);

/// Average symmetric surface distance over the two boundary sets, in mm.
double asd(const BinaryMask& seg, const BinaryMask& gs);

enum class HdMode { Directed, Symmetric };

/// Hausdorff distance over the mask point sets (directed: max over seg of
/// the min distance to gs), in mm.
double hausdorff(const BinaryMask& seg, const BinaryMask& gs, HdMode mode);

/// Exact squared Euclidean distance transform to the seed set, anisotropic
/// spacing applied. Cells unreachable (no seeds at all) hold +inf.
std::vector<double> squared_distance_to_set(const std::array<int, 3>& dims,
                                            const std::array<double, 3>& spacing,
                                            const std::vector<uint8_t>& seeds);

struct StructureMetrics {
  double dice = 0.0;
  std::optional<double> asd_mm;
  std::optional<double> hd_mm;           // symmetric
  std::optional<double> hd_directed_mm;  // pred -> gt
  std::string flags;                     // "", "empty_both", "empty_pred", "empty_gt"
};

/// Per-structure report. Structure order matches the usual table layout:
/// Myo, LV, RV.
struct MetricsReport {
  std::string case_id;
  std::vector<std::pair<std::string, StructureMetrics>> structures;

  const StructureMetrics& of(const std::string& name) const;
};

inline const std::array<std::pair<const char*, uint8_t>, 3> kStructures = {
    std::pair<const char*, uint8_t>{"Myo", 3},
    std::pair<const char*, uint8_t>{"LV", 1},
    std::pair<const char*, uint8_t>{"RV", 2}};

MetricsReport evaluate_case(const std::string& case_id, const std::vector<uint8_t>& pred_labels,
                            const std::vector<uint8_t>& gt_labels, const std::array<int, 3>& dims,
                            const std::array<double, 3>& spacing);

/// One JSON object per case (JSON-lines file).
void write_reports_json(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);
/// One CSV row per (case, structure): case_id, structure, dice, asd_mm, hd_mm, flags.
void write_reports_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);

}  // namespace srscn::metrics
