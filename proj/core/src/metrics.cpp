#include "srscn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace srscn::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D lower-envelope distance transform over parabolas at positions i*step,
// skipping +inf entries (lines with no seeds yet).
void dt1d(const double* f, int n, double step, double* out, int* v, double* z) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + step * step * static_cast<double>(q) * q;
    double s = 0.0;
    while (k >= 0) {
      const int p = v[k];
      const double fp = f[p] + step * step * static_cast<double>(p) * p;
      s = (fq - fp) / (2.0 * step * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = (k == 0) ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double x = step * q;
    while (z[j + 1] < x) ++j;
    const double d = x - step * v[j];
    out[q] = d * d + f[v[j]];
  }
}

void require_compatible(const BinaryMask& a, const BinaryMask& b) {
  a.validate();
  b.validate();
  if (a.nd != b.nd || a.dims != b.dims || a.spacing != b.spacing)
    throw ShapeError("metrics: masks differ in dims, dimensionality, or spacing");
}

double max_sqrt_over_points(const std::vector<double>& sq, const BinaryMask& pts) {
  double best = 0.0;
  for (int64_t i = 0; i < pts.size(); ++i)
    if (pts.m[static_cast<size_t>(i)]) best = std::max(best, sq[static_cast<size_t>(i)]);
  return std::sqrt(best);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

BinaryMask BinaryMask::make2d(int h, int w, double dy, double dx) {
  BinaryMask b;
  b.nd = 2;
  b.dims = {1, h, w};
  b.spacing = {1.0, dy, dx};
  b.m.assign(static_cast<size_t>(h) * w, 0);
  b.validate();
  return b;
}

BinaryMask BinaryMask::make3d(int nz, int h, int w, double dz, double dy, double dx) {
  BinaryMask b;
  b.nd = 3;
  b.dims = {nz, h, w};
  b.spacing = {dz, dy, dx};
  b.m.assign(static_cast<size_t>(nz) * h * w, 0);
  b.validate();
  return b;
}

int64_t BinaryMask::count() const {
  int64_t c = 0;
  for (uint8_t v : m) c += v != 0;
  return c;
}

void BinaryMask::validate() const {
  if (nd != 2 && nd != 3) throw ShapeError("mask: nd must be 2 or 3");
  if (nd == 2 && dims[0] != 1) throw ShapeError("mask: 2D mask must have dims[0] == 1");
  for (int d : dims)
    if (d <= 0) throw ShapeError("mask: non-positive dimension");
  if (static_cast<int64_t>(m.size()) != size()) throw ShapeError("mask: data does not match dims");
  for (double s : spacing)
    if (!(s > 0.0)) throw ShapeError("mask: spacing must be positive");
}

double dice_binary(const BinaryMask& a, const BinaryMask& b) {
  require_compatible(a, b);
  int64_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.m.size(); ++i) {
    na += a.m[i] != 0;
    nb += b.m[i] != 0;
    inter += (a.m[i] != 0 && b.m[i] != 0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

BoundarySet extract_boundary(const BinaryMask& mask) {
  mask.validate();
  BoundarySet b;
  b.spacing = mask.spacing;
  const int nz = mask.dims[0], h = mask.dims[1], w = mask.dims[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!mask.at(z, y, x)) continue;
        bool edge = (y == 0 || !mask.at(z, y - 1, x)) || (y == h - 1 || !mask.at(z, y + 1, x)) ||
                    (x == 0 || !mask.at(z, y, x - 1)) || (x == w - 1 || !mask.at(z, y, x + 1));
        if (mask.nd == 3)
          edge = edge || (z == 0 || !mask.at(z - 1, y, x)) || (z == nz - 1 || !mask.at(z + 1, y, x));
        if (edge) b.idx.push_back({z, y, x});
      }
  return b;
}

std::vector<double> squared_distance_to_set(const std::array<int, 3>& dims,
                                            const std::array<double, 3>& spacing,
                                            const std::vector<uint8_t>& seeds) {
  const int nz = dims[0], h = dims[1], w = dims[2];
  if (static_cast<int64_t>(seeds.size()) != static_cast<int64_t>(nz) * h * w)
    throw ShapeError("squared_distance_to_set: seed grid does not match dims");

  std::vector<double> d(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) d[i] = seeds[i] ? 0.0 : kInf;

  const int maxdim = std::max({nz, h, w});
  std::vector<double> line(static_cast<size_t>(maxdim)), out(static_cast<size_t>(maxdim));
  std::vector<int> v(static_cast<size_t>(maxdim));
  std::vector<double> z(static_cast<size_t>(maxdim) + 1);

  // x pass
  for (int zz = 0; zz < nz; ++zz)
    for (int y = 0; y < h; ++y) {
      double* row = &d[(static_cast<size_t>(zz) * h + y) * w];
      dt1d(row, w, spacing[2], out.data(), v.data(), z.data());
      std::copy_n(out.data(), w, row);
    }
  // y pass
  for (int zz = 0; zz < nz; ++zz)
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) line[static_cast<size_t>(y)] = d[(static_cast<size_t>(zz) * h + y) * w + x];
      dt1d(line.data(), h, spacing[1], out.data(), v.data(), z.data());
      for (int y = 0; y < h; ++y) d[(static_cast<size_t>(zz) * h + y) * w + x] = out[static_cast<size_t>(y)];
    }
  // z pass
  if (nz > 1) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int zz = 0; zz < nz; ++zz) line[static_cast<size_t>(zz)] = d[(static_cast<size_t>(zz) * h + y) * w + x];
        dt1d(line.data(), nz, spacing[0], out.data(), v.data(), z.data());
        for (int zz = 0; zz < nz; ++zz) d[(static_cast<size_t>(zz) * h + y) * w + x] = out[static_cast<size_t>(zz)];
      }
  }
  return d;
}

double asd(const BinaryMask& seg, const BinaryMask& gs) {
  require_compatible(seg, gs);
  if (seg.count() == 0 || gs.count() == 0)
    throw UndefinedMetricError("asd: undefined for an empty mask");

  const BoundarySet bseg = extract_boundary(seg);
  const BoundarySet bgs = extract_boundary(gs);

  std::vector<uint8_t> seed_gs(gs.m.size(), 0), seed_seg(seg.m.size(), 0);
  for (const auto& p : bgs.idx) seed_gs[static_cast<size_t>(gs.index(p[0], p[1], p[2]))] = 1;
  for (const auto& p : bseg.idx) seed_seg[static_cast<size_t>(seg.index(p[0], p[1], p[2]))] = 1;
  const auto d_to_gs = squared_distance_to_set(gs.dims, gs.spacing, seed_gs);
  const auto d_to_seg = squared_distance_to_set(seg.dims, seg.spacing, seed_seg);

  double total = 0.0;
  for (const auto& p : bseg.idx) total += std::sqrt(d_to_gs[static_cast<size_t>(seg.index(p[0], p[1], p[2]))]);
  for (const auto& p : bgs.idx) total += std::sqrt(d_to_seg[static_cast<size_t>(gs.index(p[0], p[1], p[2]))]);
  return total / static_cast<double>(bseg.size() + bgs.size());
}

double hausdorff(const BinaryMask& seg, const BinaryMask& gs, HdMode mode) {
  require_compatible(seg, gs);
  if (seg.count() == 0 || gs.count() == 0)
    throw UndefinedMetricError("hausdorff: undefined for an empty mask");

  const auto d_to_gs = squared_distance_to_set(gs.dims, gs.spacing, gs.m);
  const double fwd = max_sqrt_over_points(d_to_gs, seg);
  if (mode == HdMode::Directed) return fwd;
  const auto d_to_seg = squared_distance_to_set(seg.dims, seg.spacing, seg.m);
  const double bwd = max_sqrt_over_points(d_to_seg, gs);
  return std::max(fwd, bwd);
}

const StructureMetrics& MetricsReport::of(const std::string& name) const {
  for (const auto& [n, s] : structures)
    if (n == name) return s;
  throw Error("metrics report: no structure named " + name);
}

MetricsReport evaluate_case(const std::string& case_id, const std::vector<uint8_t>& pred_labels,
                            const std::vector<uint8_t>& gt_labels, const std::array<int, 3>& dims,
                            const std::array<double, 3>& spacing) {
  const int64_t n = static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
  if (static_cast<int64_t>(pred_labels.size()) != n || static_cast<int64_t>(gt_labels.size()) != n)
    throw ShapeError("evaluate_case: label grids do not match dims");

  MetricsReport rep;
  rep.case_id = case_id;
  for (const auto& [name, cls] : kStructures) {
    BinaryMask pm = dims[0] > 1 ? BinaryMask::make3d(dims[0], dims[1], dims[2], spacing[0], spacing[1], spacing[2])
                                : BinaryMask::make2d(dims[1], dims[2], spacing[1], spacing[2]);
    BinaryMask gm = pm;
    for (int64_t i = 0; i < n; ++i) {
      pm.m[static_cast<size_t>(i)] = pred_labels[static_cast<size_t>(i)] == cls;
      gm.m[static_cast<size_t>(i)] = gt_labels[static_cast<size_t>(i)] == cls;
    }
    StructureMetrics sm;
    sm.dice = dice_binary(pm, gm);
    const bool pe = pm.count() == 0, ge = gm.count() == 0;
    if (pe || ge) {
      sm.flags = pe && ge ? "empty_both" : (pe ? "empty_pred" : "empty_gt");
    } else {
      sm.asd_mm = asd(pm, gm);
      sm.hd_directed_mm = hausdorff(pm, gm, HdMode::Directed);
      sm.hd_mm = hausdorff(pm, gm, HdMode::Symmetric);
    }
    rep.structures.emplace_back(name, sm);
  }
  return rep;
}

void write_reports_json(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_reports_json: cannot open " + path.string());
  for (const auto& rep : reports) {
    nlohmann::json j;
    j["case_id"] = rep.case_id;
    for (const auto& [name, s] : rep.structures) {
      nlohmann::json js;
      js["dice"] = s.dice;
      if (s.asd_mm) js["asd_mm"] = *s.asd_mm;
      if (s.hd_mm) js["hd_mm"] = *s.hd_mm;
      if (s.hd_directed_mm) js["hd_directed_mm"] = *s.hd_directed_mm;
      if (!s.flags.empty()) js["flags"] = s.flags;
      j["structures"][name] = js;
    }
    out << j.dump() << "\n";
  }
}

void write_reports_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_reports_csv: cannot open " + path.string());
  out << "case_id,structure,dice,asd_mm,hd_mm,flags\n";
  for (const auto& rep : reports)
    for (const auto& [name, s] : rep.structures) {
      out << rep.case_id << "," << name << "," << fmt(s.dice) << ",";
      out << (s.asd_mm ? fmt(*s.asd_mm) : "") << ",";
      out << (s.hd_mm ? fmt(*s.hd_mm) : "") << "," << s.flags << "\n";
    }
}

}  // namespace srscn::metrics
