#include "srscn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "srscn/rng.hpp"

namespace srscn::phantom {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

double wrap_angle(double a) {
  while (a > 3.14159265358979323846) a -= kTwoPi;
  while (a < -3.14159265358979323846) a += kTwoPi;
  return a;
}

struct HeteroBlob {
  double z_center;   // slice position units
  double angle;      // where on the ring
  double radius_px;  // in-plane extent
  double z_radius;   // extent in slice-position units
  double amplitude;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void PhantomConfig::validate() const {
  if (n_slices < 3) throw ConfigError("phantom: n_slices must be >= 3");
  if (height < 32 || width < 32) throw ConfigError("phantom: height and width must be >= 32");
  if (noise_sigma < 0.0) throw ConfigError("phantom: noise_sigma must be >= 0");
  if (intensity_heterogeneity < 0.0 || intensity_heterogeneity > 1.0)
    throw ConfigError("phantom: intensity_heterogeneity must be in [0,1]");
  for (double s : spacing)
    if (!(s > 0.0)) throw ConfigError("phantom: spacing components must be > 0");
}

void LabeledVolume::validate() const {
  for (int d : dims)
    if (d <= 0) throw FormatError("volume: non-positive dimension");
  if (static_cast<int64_t>(intensities.size()) != voxels() ||
      static_cast<int64_t>(labels.size()) != voxels())
    throw FormatError("volume: intensity/label grids do not match dims");
  for (uint8_t l : labels)
    if (l >= kNumClasses) throw FormatError("volume: label outside {0,1,2,3}");
  if (static_cast<int>(slice_positions.size()) != dims[0])
    throw FormatError("volume: slice_positions length != n_slices");
  for (size_t i = 1; i < slice_positions.size(); ++i)
    if (!(slice_positions[i] > slice_positions[i - 1]))
      throw FormatError("volume: slice_positions not strictly increasing");
  for (double s : spacing)
    if (!(s > 0.0)) throw FormatError("volume: spacing components must be > 0");
}

LabeledVolume generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const int nz = cfg.n_slices, h = cfg.height, w = cfg.width;
  const double m = static_cast<double>(std::min(h, w));

  // Volume-level geometry, drawn in a fixed order.
  const double cy = (h - 1) / 2.0 + m * rng.uniform(-0.04, 0.04);
  const double cx = (w - 1) / 2.0 + m * rng.uniform(-0.04, 0.04);
  const double lv_ax = m * rng.uniform(0.16, 0.20);        // LV semi-axis along x at the base
  const double lv_ay = lv_ax * rng.uniform(0.85, 1.0);     // mild eccentricity
  const double thick = std::max(2.2, lv_ax * rng.uniform(0.32, 0.42));
  const double rv_dir = rng.uniform(0.0, kTwoPi);
  const double rv_halfwidth = rng.uniform(0.75, 1.05);     // radians at the base
  const double rv_thick = std::max(2.0, lv_ax * rng.uniform(0.45, 0.60));

  std::vector<HeteroBlob> blobs;
  if (cfg.intensity_heterogeneity > 0.0) {
    const int count = static_cast<int>(rng.uniform_int(2, 4));
    for (int i = 0; i < count; ++i) {
      HeteroBlob b{};
      b.z_center = rng.uniform(0.25, 0.9);
      b.angle = rng.uniform(0.0, kTwoPi);
      b.radius_px = m * rng.uniform(0.08, 0.18);
      b.z_radius = rng.uniform(0.15, 0.35);
      b.amplitude = cfg.intensity_heterogeneity * rng.uniform(0.18, 0.32);
      blobs.push_back(b);
    }
  }

  LabeledVolume v;
  v.dims = {nz, h, w};
  v.spacing = cfg.spacing;
  v.intensities.resize(static_cast<size_t>(v.voxels()));
  v.labels.assign(static_cast<size_t>(v.voxels()), kBackground);
  v.slice_positions.resize(static_cast<size_t>(nz));
  for (int z = 0; z < nz; ++z) v.slice_positions[static_cast<size_t>(z)] = static_cast<double>(z) / (nz - 1);

  std::vector<double> acc(static_cast<size_t>(v.voxels()));

  for (int z = 0; z < nz; ++z) {
    const double p = v.slice_positions[static_cast<size_t>(z)];
    const double scale = 0.35 + 0.65 * p;  // structures shrink toward the apex
    double ax = lv_ax * scale, ay = lv_ay * scale;
    const bool lv_present = ax >= 1.2;
    if (!lv_present) ax = ay = 0.0;
    const double t = std::max(2.2, thick * (0.6 + 0.4 * p));
    const double ex = lv_ax * scale + t, ey = lv_ay * scale + t;  // epicardium
    const double rwt = rv_thick * scale;
    const double rv_sector = rv_halfwidth * (0.55 + 0.45 * p);
    const bool rv_present = rwt >= 1.3;

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        uint8_t lab = kBackground;
        if (lv_present && (dx * dx) / (ax * ax) + (dy * dy) / (ay * ay) <= 1.0) {
          lab = kLV;
        } else if ((dx * dx) / (ex * ex) + (dy * dy) / (ey * ey) <= 1.0) {
          lab = kMyo;
        } else if (rv_present &&
                   (dx * dx) / ((ex + rwt) * (ex + rwt)) + (dy * dy) / ((ey + rwt) * (ey + rwt)) <= 1.0 &&
                   std::abs(wrap_angle(std::atan2(dy, dx) - rv_dir)) <= rv_sector) {
          lab = kRV;
        }
        const int64_t idx = v.index(z, y, x);
        v.labels[static_cast<size_t>(idx)] = lab;

        double base = 0.2;  // background
        if (lab == kLV) base = 0.8;
        else if (lab == kRV) base = 0.7;
        else if (lab == kMyo) base = 0.45;

        if (lab == kMyo) {
          const double amid = lv_ax * scale + t / 2.0, bmid = lv_ay * scale + t / 2.0;
          for (const HeteroBlob& b : blobs) {
            const double bx = cx + std::cos(b.angle) * amid;
            const double by = cy + std::sin(b.angle) * bmid;
            const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
            const double dz = (p - b.z_center) / b.z_radius;
            base += b.amplitude * std::exp(-d2 / (2.0 * b.radius_px * b.radius_px) - 0.5 * dz * dz);
          }
        }
        acc[static_cast<size_t>(idx)] = base;
      }
    }
  }

  // Noise last, one stream pass, so geometry draws stay aligned across configs.
  for (size_t i = 0; i < acc.size(); ++i) {
    const double n = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
    v.intensities[i] = static_cast<float>(acc[i] + n);
  }

  v.validate();
  return v;
}

// ---------------------------------------------------------------------------
// container IO

void write_volume(const LabeledVolume& v, const std::filesystem::path& path) {
  v.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_volume: cannot open " + path.string());

  const int64_t n = v.voxels();
  std::ostringstream hdr;
  hdr << "srscn_volume=1\n";
  hdr << "dims=" << v.dims[0] << "," << v.dims[1] << "," << v.dims[2] << "\n";
  hdr << "spacing=" << fmt_double(v.spacing[0]) << "," << fmt_double(v.spacing[1]) << ","
      << fmt_double(v.spacing[2]) << "\n";
  hdr << "slice_positions=";
  for (size_t i = 0; i < v.slice_positions.size(); ++i)
    hdr << (i ? "," : "") << fmt_double(v.slice_positions[i]);
  hdr << "\n";
  hdr << "intensity_dtype=float32_le\n";
  hdr << "label_dtype=uint8\n";
  hdr << "intensity_offset=0\n";          // offsets are relative to payload start
  hdr << "label_offset=" << n * 4 << "\n";
  hdr << "\n";
  out << hdr.str();

  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(v.intensities.data()), n * 4);
  out.write(reinterpret_cast<const char*>(v.labels.data()), n);
  if (!out) throw FormatError("write_volume: write failed for " + path.string());
}

LabeledVolume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_volume: cannot open " + path.string());

  std::map<std::string, std::string> kv;
  std::string line;
  bool saw_magic = false;
  while (std::getline(in, line)) {
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("read_volume: malformed header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
    if (line.substr(0, eq) == "srscn_volume") saw_magic = true;
  }
  if (!saw_magic || kv["srscn_volume"] != "1")
    throw FormatError("read_volume: missing or unsupported srscn_volume header");

  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("read_volume: missing header field " + key);
    return it->second;
  };
  auto split_doubles = [](const std::string& s) {
    std::vector<double> vals;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("read_volume: bad numeric field: " + tok);
      }
    }
    return vals;
  };

  LabeledVolume v;
  const auto dims = split_doubles(need("dims"));
  if (dims.size() != 3) throw FormatError("read_volume: dims must have 3 entries");
  for (int i = 0; i < 3; ++i) {
    if (dims[static_cast<size_t>(i)] <= 0 || dims[static_cast<size_t>(i)] != std::floor(dims[static_cast<size_t>(i)]))
      throw FormatError("read_volume: dims must be positive integers");
    v.dims[static_cast<size_t>(i)] = static_cast<int>(dims[static_cast<size_t>(i)]);
  }
  const auto sp = split_doubles(need("spacing"));
  if (sp.size() != 3) throw FormatError("read_volume: spacing must have 3 entries");
  std::copy(sp.begin(), sp.end(), v.spacing.begin());
  v.slice_positions = split_doubles(need("slice_positions"));
  if (need("intensity_dtype") != "float32_le" || need("label_dtype") != "uint8")
    throw FormatError("read_volume: unsupported payload dtype");

  const int64_t n = v.voxels();
  const int64_t int_off = static_cast<int64_t>(std::stoll(need("intensity_offset")));
  const int64_t lab_off = static_cast<int64_t>(std::stoll(need("label_offset")));
  if (int_off != 0 || lab_off != n * 4)
    throw FormatError("read_volume: offsets inconsistent with dims");

  const std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const int64_t payload_bytes = static_cast<int64_t>(in.tellg() - payload_start);
  if (payload_bytes != n * 4 + n)
    throw FormatError("read_volume: payload has " + std::to_string(payload_bytes) +
                      " bytes, expected " + std::to_string(n * 4 + n));
  in.seekg(payload_start);

  v.intensities.resize(static_cast<size_t>(n));
  v.labels.resize(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(v.intensities.data()), n * 4);
  in.read(reinterpret_cast<char*>(v.labels.data()), n);
  if (!in) throw FormatError("read_volume: truncated payload");

  v.validate();
  return v;
}

}  // namespace srscn::phantom
