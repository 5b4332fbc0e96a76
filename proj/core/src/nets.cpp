#include "srscn/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "srscn/rng.hpp"

namespace srscn::nets {

using diff::Pad;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

// He fan-in init; draw order is creation order, independent of map layout.
void add_conv(Params& p, Rng& rng, const std::string& name, int out_c, int in_c, int k) {
  Tensor w({out_c, in_c, k, k});
  const double std = std::sqrt(2.0 / (in_c * k * k));
  for (auto& v : w.data) v = rng.normal(0.0, std);
  p.tensors[name + ".w"] = std::move(w);
  p.tensors[name + ".b"] = Tensor({out_c});
}

void add_dense(Params& p, Rng& rng, const std::string& name, int out_d, int in_d) {
  Tensor w({out_d, in_d});
  const double std = std::sqrt(2.0 / in_d);
  for (auto& v : w.data) v = rng.normal(0.0, std);
  p.tensors[name + ".w"] = std::move(w);
  p.tensors[name + ".b"] = Tensor({out_d});
}

Var conv_relu(Tape& t, const BoundParams& p, const std::string& name, Var x) {
  return t.relu(t.conv2d(x, p.at(name + ".w"), p.at(name + ".b"), Pad::Same));
}

int64_t conv_count(int out_c, int in_c, int k) { return static_cast<int64_t>(out_c) * in_c * k * k + out_c; }
int64_t dense_count(int out_d, int in_d) { return static_cast<int64_t>(out_d) * in_d + out_d; }

}  // namespace

void BackboneSpec::validate() const {
  if (levels < 1 || base_channels < 1 || in_channels < 1 || out_classes < 2)
    throw ConfigError("backbone spec: invalid field");
}

void SRSpec::validate() const {
  if (levels < 1 || code_channels < 1 || classes < 2) throw ConfigError("sr spec: invalid field");
  if (code_channels % (1 << (levels - 1)) != 0)
    throw ConfigError("sr spec: code_channels must be divisible by 2^(levels-1)");
}

void SCHeadSpec::validate() const {
  if (in_channels < 1 || hidden < 1) throw ConfigError("sc head spec: invalid field");
}

void DiscrSpec::validate() const {
  if (levels < 1 || base_channels < 1 || in_channels < 1 || hidden < 1)
    throw ConfigError("discriminator spec: invalid field");
}

int64_t Params::count() const {
  int64_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

uint64_t Params::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
  }
  return h;
}

const Tensor& Params::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("params: missing tensor " + name);
  return it->second;
}

Var BoundParams::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ConfigError("bound params: missing tensor " + name);
  return it->second;
}

BoundParams bind(Tape& tape, const Params& params, bool trainable) {
  BoundParams b;
  for (const auto& [name, t] : params.tensors) b.vars[name] = tape.leaf(t, trainable);
  return b;
}

// ---------------------------------------------------------------------------
// construction

Params init_backbone(const BackboneSpec& spec, uint64_t seed) {
  spec.validate();
  Params p;
  Rng rng(seed);
  int prev = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    const int ch = spec.base_channels << l;
    add_conv(p, rng, "enc" + std::to_string(l) + ".conv1", ch, prev, 3);
    add_conv(p, rng, "enc" + std::to_string(l) + ".conv2", ch, ch, 3);
    prev = ch;
  }
  const int bott = spec.bottleneck_channels();
  add_conv(p, rng, "bottleneck.conv1", bott, prev, 3);
  add_conv(p, rng, "bottleneck.conv2", bott, bott, 3);
  for (int l = spec.levels - 1; l >= 0; --l) {
    const int ch = spec.base_channels << l;
    const int up_in = l == spec.levels - 1 ? bott : spec.base_channels << (l + 1);
    add_conv(p, rng, "dec" + std::to_string(l) + ".up", ch, up_in, 3);
    add_conv(p, rng, "dec" + std::to_string(l) + ".conv1", ch, 2 * ch, 3);
    add_conv(p, rng, "dec" + std::to_string(l) + ".conv2", ch, ch, 3);
  }
  add_conv(p, rng, "head", spec.out_classes, spec.base_channels, 1);
  return p;
}

int64_t backbone_param_count(const BackboneSpec& spec) {
  spec.validate();
  int64_t n = 0;
  int prev = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    const int ch = spec.base_channels << l;
    n += conv_count(ch, prev, 3) + conv_count(ch, ch, 3);
    prev = ch;
  }
  const int bott = spec.bottleneck_channels();
  n += conv_count(bott, prev, 3) + conv_count(bott, bott, 3);
  for (int l = spec.levels - 1; l >= 0; --l) {
    const int ch = spec.base_channels << l;
    const int up_in = l == spec.levels - 1 ? bott : spec.base_channels << (l + 1);
    n += conv_count(ch, up_in, 3) + conv_count(ch, 2 * ch, 3) + conv_count(ch, ch, 3);
  }
  n += conv_count(spec.out_classes, spec.base_channels, 1);
  return n;
}

Params init_sr(const SRSpec& spec, uint64_t seed) {
  spec.validate();
  Params p;
  Rng rng(seed);
  int prev = spec.classes;
  for (int l = 0; l < spec.levels; ++l) {
    add_conv(p, rng, "enc" + std::to_string(l), spec.encoder_channels(l), prev, 3);
    prev = spec.encoder_channels(l);
  }
  for (int l = spec.levels - 1; l >= 1; --l)
    add_conv(p, rng, "dec" + std::to_string(l), spec.encoder_channels(l - 1), spec.encoder_channels(l), 3);
  add_conv(p, rng, "dec0", spec.encoder_channels(0), spec.encoder_channels(0), 3);
  add_conv(p, rng, "head", spec.classes, spec.encoder_channels(0), 1);
  return p;
}

int64_t sr_param_count(const SRSpec& spec) {
  spec.validate();
  int64_t n = 0;
  int prev = spec.classes;
  for (int l = 0; l < spec.levels; ++l) {
    n += conv_count(spec.encoder_channels(l), prev, 3);
    prev = spec.encoder_channels(l);
  }
  for (int l = spec.levels - 1; l >= 1; --l)
    n += conv_count(spec.encoder_channels(l - 1), spec.encoder_channels(l), 3);
  n += conv_count(spec.encoder_channels(0), spec.encoder_channels(0), 3);
  n += conv_count(spec.classes, spec.encoder_channels(0), 1);
  return n;
}

Params init_sc_head(const SCHeadSpec& spec, uint64_t seed) {
  spec.validate();
  Params p;
  Rng rng(seed);
  add_dense(p, rng, "fc1", spec.hidden, spec.in_channels);
  add_dense(p, rng, "fc2", 1, spec.hidden);
  return p;
}

int64_t sc_head_param_count(const SCHeadSpec& spec) {
  spec.validate();
  return dense_count(spec.hidden, spec.in_channels) + dense_count(1, spec.hidden);
}

Params init_discr(const DiscrSpec& spec, uint64_t seed) {
  spec.validate();
  Params p;
  Rng rng(seed);
  int prev = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    add_conv(p, rng, "block" + std::to_string(l), spec.base_channels << l, prev, 3);
    prev = spec.base_channels << l;
  }
  add_dense(p, rng, "fc1", spec.hidden, prev);
  add_dense(p, rng, "fc2", 1, spec.hidden);
  return p;
}

int64_t discr_param_count(const DiscrSpec& spec) {
  spec.validate();
  int64_t n = 0;
  int prev = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    n += conv_count(spec.base_channels << l, prev, 3);
    prev = spec.base_channels << l;
  }
  return n + dense_count(spec.hidden, prev) + dense_count(1, spec.hidden);
}

// ---------------------------------------------------------------------------
// forwards

BackboneOut backbone_forward(Tape& t, const BoundParams& p, const BackboneSpec& spec, Var image) {
  spec.validate();
  const Tensor& img = t.value(image);
  if (img.ndim() != 4 || img.dim(1) != spec.in_channels)
    throw ShapeError("backbone: input must be (N," + std::to_string(spec.in_channels) + ",H,W), got " +
                     diff::shape_str(img.shape));
  const int stride = 1 << spec.levels;
  if (img.dim(2) % stride != 0 || img.dim(3) % stride != 0)
    throw ShapeError("backbone: H and W must be divisible by 2^levels = " + std::to_string(stride));

  std::vector<Var> skips;
  Var x = image;
  for (int l = 0; l < spec.levels; ++l) {
    const std::string e = "enc" + std::to_string(l);
    x = conv_relu(t, p, e + ".conv1", x);
    x = conv_relu(t, p, e + ".conv2", x);
    skips.push_back(x);
    x = t.maxpool2x(x);
  }
  x = conv_relu(t, p, "bottleneck.conv1", x);
  x = conv_relu(t, p, "bottleneck.conv2", x);
  const Var bottleneck = x;
  for (int l = spec.levels - 1; l >= 0; --l) {
    const std::string d = "dec" + std::to_string(l);
    x = t.upsample2x(x);
    x = conv_relu(t, p, d + ".up", x);
    x = t.concat_channels(x, skips[static_cast<size_t>(l)]);
    x = conv_relu(t, p, d + ".conv1", x);
    x = conv_relu(t, p, d + ".conv2", x);
  }
  const Var logits = t.conv2d(x, p.at("head.w"), p.at("head.b"), Pad::Same);
  return BackboneOut{t.softmax_channels(logits), bottleneck};
}

namespace {

Var sr_encode_code(Tape& t, const BoundParams& p, const SRSpec& spec, Var x) {
  spec.validate();
  const Tensor& in = t.value(x);
  if (in.ndim() != 4 || in.dim(1) != spec.classes)
    throw ShapeError("sr: input must be (N," + std::to_string(spec.classes) + ",H,W), got " +
                     diff::shape_str(in.shape));
  const int stride = 1 << spec.levels;
  if (in.dim(2) % stride != 0 || in.dim(3) % stride != 0)
    throw ShapeError("sr: H and W must be divisible by 2^levels = " + std::to_string(stride));
  for (int l = 0; l < spec.levels; ++l) {
    x = conv_relu(t, p, "enc" + std::to_string(l), x);
    x = t.maxpool2x(x);
  }
  return x;
}

}  // namespace

Var sr_forward(Tape& t, const BoundParams& p, const SRSpec& spec, Var labelmap) {
  Var x = sr_encode_code(t, p, spec, labelmap);
  for (int l = spec.levels - 1; l >= 1; --l) {
    x = t.upsample2x(x);
    x = conv_relu(t, p, "dec" + std::to_string(l), x);
  }
  x = t.upsample2x(x);
  x = conv_relu(t, p, "dec0", x);
  const Var logits = t.conv2d(x, p.at("head.w"), p.at("head.b"), Pad::Same);
  return t.softmax_channels(logits);
}

Var acnn_encode(Tape& t, const BoundParams& p, const SRSpec& spec, Var labelmap) {
  const Var code = sr_encode_code(t, p, spec, labelmap);
  const Tensor& c = t.value(code);
  return t.reshape(code, {c.dim(0), static_cast<int>(c.size() / c.dim(0))});
}

Var sc_forward(Tape& t, const BoundParams& p, const SCHeadSpec& spec, Var bottleneck) {
  spec.validate();
  const Tensor& b = t.value(bottleneck);
  if (b.ndim() != 4 || b.dim(1) != spec.in_channels)
    throw ShapeError("sc head: bottleneck must be (N," + std::to_string(spec.in_channels) + ",h,w), got " +
                     diff::shape_str(b.shape));
  Var x = t.global_avg_pool(bottleneck);
  x = t.relu(t.dense(x, p.at("fc1.w"), p.at("fc1.b")));
  x = t.dense(x, p.at("fc2.w"), p.at("fc2.b"));
  return t.sigmoid(x);
}

Var discr_forward(Tape& t, const BoundParams& p, const DiscrSpec& spec, Var labelmap) {
  spec.validate();
  const Tensor& in = t.value(labelmap);
  if (in.ndim() != 4 || in.dim(1) != spec.in_channels)
    throw ShapeError("discriminator: input must be (N," + std::to_string(spec.in_channels) + ",H,W), got " +
                     diff::shape_str(in.shape));
  const int stride = 1 << spec.levels;
  if (in.dim(2) % stride != 0 || in.dim(3) % stride != 0)
    throw ShapeError("discriminator: H and W must be divisible by 2^levels = " + std::to_string(stride));
  Var x = labelmap;
  for (int l = 0; l < spec.levels; ++l) {
    x = conv_relu(t, p, "block" + std::to_string(l), x);
    x = t.maxpool2x(x);
  }
  x = t.global_avg_pool(x);
  x = t.relu(t.dense(x, p.at("fc1.w"), p.at("fc1.b")));
  x = t.dense(x, p.at("fc2.w"), p.at("fc2.b"));
  return t.sigmoid(x);
}

// ---------------------------------------------------------------------------
// inference without gradient bookkeeping

diff::Tensor backbone_infer_prob(const BackboneSpec& spec, const Params& params, const Tensor& images) {
  return backbone_infer_prob_bottleneck(spec, params, images).first;
}

std::pair<Tensor, Tensor> backbone_infer_prob_bottleneck(const BackboneSpec& spec, const Params& params,
                                                         const Tensor& images) {
  Tape t;
  const BoundParams p = bind(t, params, false);
  const BackboneOut out = backbone_forward(t, p, spec, t.constant(images));
  return {t.value(out.prob), t.value(out.bottleneck)};
}

Tensor sr_infer(const SRSpec& spec, const Params& params, const Tensor& labelmap) {
  Tape t;
  const BoundParams p = bind(t, params, false);
  return t.value(sr_forward(t, p, spec, t.constant(labelmap)));
}

Tensor sc_infer(const SCHeadSpec& spec, const Params& params, const Tensor& bottleneck) {
  Tape t;
  const BoundParams p = bind(t, params, false);
  return t.value(sc_forward(t, p, spec, t.constant(bottleneck)));
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, std::string>& meta,
                     const Params& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_checkpoint: cannot open " + path.string());
  out << "srscn_checkpoint=1\n";
  for (const auto& [k, v] : meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw FormatError("save_checkpoint: meta keys/values must be single-line, '='-free keys");
    out << "meta." << k << "=" << v << "\n";
  }
  out << "tensors=" << params.tensors.size() << "\n";
  for (const auto& [name, t] : params.tensors) {
    out << "tensor=" << name << " ";
    for (size_t i = 0; i < t.shape.size(); ++i) out << (i ? "," : "") << t.shape[i];
    out << "\n";
  }
  out << "\n";
  static_assert(sizeof(float) == 4);
  std::vector<float> buf;
  for (const auto& [_, t] : params.tensors) {
    buf.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw FormatError("save_checkpoint: write failed for " + path.string());
}

Params load_checkpoint(const std::filesystem::path& path, std::map<std::string, std::string>* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "srscn_checkpoint=1")
    throw FormatError("load_checkpoint: bad magic line");

  Params params;
  std::vector<std::pair<std::string, diff::Shape>> order;
  int64_t declared = -1;
  while (std::getline(in, line)) {
    if (line.empty()) break;
    if (line.rfind("meta.", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("load_checkpoint: malformed meta line");
      if (meta_out) (*meta_out)[line.substr(5, eq - 5)] = line.substr(eq + 1);
    } else if (line.rfind("tensors=", 0) == 0) {
      declared = std::stoll(line.substr(8));
    } else if (line.rfind("tensor=", 0) == 0) {
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw FormatError("load_checkpoint: malformed tensor line");
      const std::string name = line.substr(7, sp - 7);
      diff::Shape shape;
      std::istringstream ss(line.substr(sp + 1));
      std::string tok;
      while (std::getline(ss, tok, ',')) shape.push_back(std::stoi(tok));
      order.emplace_back(name, std::move(shape));
    } else {
      throw FormatError("load_checkpoint: unexpected header line: " + line);
    }
  }
  if (declared != static_cast<int64_t>(order.size()))
    throw FormatError("load_checkpoint: tensor count mismatch");

  std::vector<float> buf;
  for (auto& [name, shape] : order) {
    Tensor t(shape);
    buf.resize(t.data.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw FormatError("load_checkpoint: truncated payload");
    for (size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<double>(buf[i]);
    if (!params.tensors.emplace(name, std::move(t)).second)
      throw FormatError("load_checkpoint: duplicate tensor " + name);
  }
  in.peek();
  if (!in.eof()) throw FormatError("load_checkpoint: trailing bytes after payload");
  return params;
}

}  // namespace srscn::nets
