#include "srscn/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <utility>

namespace srscn::diff {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

// Conv workspaces outlive tapes and steps: repeated large allocations would
// bounce off the allocator's mmap threshold and dominate small-net runtimes.
struct ConvScratch {
  std::vector<double> col, mat, dcol;
  double* get(std::vector<double>& buf, int64_t n) {
    if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
    return buf.data();
  }
};
ConvScratch& conv_scratch() {
  static thread_local ConvScratch s;
  return s;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

struct ConvDims {
  int n, ci, h, w, co, kh, kw, ph, pw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, Pad pad) {
  require(x.ndim() == 4, "conv2d: input must be (N,C,H,W), got " + shape_str(x.shape));
  require(w.ndim() == 4, "conv2d: weight must be (Co,Ci,kh,kw), got " + shape_str(w.shape));
  require(w.dim(1) == x.dim(1), "conv2d: channel mismatch between input " + shape_str(x.shape) +
                                    " and weight " + shape_str(w.shape));
  ConvDims d{};
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (pad == Pad::Same) {
    require(d.kh % 2 == 1 && d.kw % 2 == 1, "conv2d: same padding needs odd kernel");
    d.ph = (d.kh - 1) / 2;
    d.pw = (d.kw - 1) / 2;
    d.ho = d.h;
    d.wo = d.w;
  } else {
    require(d.h >= d.kh && d.w >= d.kw, "conv2d: kernel larger than input");
    d.ph = 0;
    d.pw = 0;
    d.ho = d.h - d.kh + 1;
    d.wo = d.w - d.kw + 1;
  }
  return d;
}

// Lowered patch matrix: rows = N*Ho*Wo, cols = Ci*kh*kw.
void im2col(const Tensor& x, const ConvDims& d, MapRM& col) {
  col.setZero();
  for (int n = 0; n < d.n; ++n) {
    for (int ho = 0; ho < d.ho; ++ho) {
      const int64_t row0 = (static_cast<int64_t>(n) * d.ho + ho) * d.wo;
      for (int ci = 0; ci < d.ci; ++ci) {
        for (int ki = 0; ki < d.kh; ++ki) {
          const int hi = ho - d.ph + ki;
          if (hi < 0 || hi >= d.h) continue;
          const double* src = &x.data[((static_cast<int64_t>(n) * d.ci + ci) * d.h + hi) * d.w];
          const int64_t colbase = (static_cast<int64_t>(ci) * d.kh + ki) * d.kw;
          for (int kj = 0; kj < d.kw; ++kj) {
            const int wlo = std::max(0, d.pw - kj);
            const int whi = std::min(d.wo, d.w + d.pw - kj);
            for (int wo = wlo; wo < whi; ++wo) {
              col(row0 + wo, colbase + kj) = src[wo - d.pw + kj];
            }
          }
        }
      }
    }
  }
}

void col2im(const MapRM& dcol, const ConvDims& d, Tensor& dx) {
  for (int n = 0; n < d.n; ++n) {
    for (int ho = 0; ho < d.ho; ++ho) {
      const int64_t row0 = (static_cast<int64_t>(n) * d.ho + ho) * d.wo;
      for (int ci = 0; ci < d.ci; ++ci) {
        for (int ki = 0; ki < d.kh; ++ki) {
          const int hi = ho - d.ph + ki;
          if (hi < 0 || hi >= d.h) continue;
          double* dst = &dx.data[((static_cast<int64_t>(n) * d.ci + ci) * d.h + hi) * d.w];
          const int64_t colbase = (static_cast<int64_t>(ci) * d.kh + ki) * d.kw;
          for (int kj = 0; kj < d.kw; ++kj) {
            const int wlo = std::max(0, d.pw - kj);
            const int whi = std::min(d.wo, d.w + d.pw - kj);
            for (int wo = wlo; wo < whi; ++wo) {
              dst[wo - d.pw + kj] += dcol(row0 + wo, colbase + kj);
            }
          }
        }
      }
    }
  }
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor data length does not match shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

Tape::Tape() { nodes_.reserve(256); }

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw Error("invalid tape variable");
  return nodes_[static_cast<size_t>(v.id)];
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::note_margin(double m) { kink_margin_ = std::min(kink_margin_, m); }

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  static const Tensor empty;
  const Node& n = node(v);
  if (n.grad.data.empty()) {
    const_cast<Tape*>(this)->nodes_[static_cast<size_t>(v.id)].grad = Tensor(n.value.shape);
  }
  return nodes_[static_cast<size_t>(v.id)].grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  return push(std::move(value), requires_grad, nullptr);
}

void Tape::backward(Var scalar_output) {
  const Node& out = node(scalar_output);
  if (out.value.size() != 1) throw ShapeError("backward: output must be scalar");
  grad_buffer(scalar_output.id).data[0] = 1.0;
  for (int id = scalar_output.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.data.empty() || !n.backward) continue;
    check_finite(n.grad, "backward");
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// elementwise and reduction ops

Var Tape::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  double margin = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < xv.size(); ++i) {
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    margin = std::min(margin, std::abs(xv[i]));
  }
  note_margin(margin);
  check_finite(out, "relu");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& xv = t.nodes_[xi].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dy[i];
  });
}

Var Tape::sigmoid(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  check_finite(out, "sigmoid");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::log(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = std::log(xv[i]);
  check_finite(out, "log");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& xv = t.nodes_[xi].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] / xv[i];
  });
}

Var Tape::pow(Var x, double exponent) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  double margin = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < xv.size(); ++i) {
    out[i] = std::pow(xv[i], exponent);
    margin = std::min(margin, std::abs(xv[i]));
  }
  if (exponent < 1.0) note_margin(margin);  // derivative diverges at 0
  check_finite(out, "pow");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, exponent](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& xv = t.nodes_[xi].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i)
      dx[i] += dy[i] * exponent * std::pow(xv[i], exponent - 1.0);
  });
}

Var Tape::clamp(Var x, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("clamp: lo must be < hi");
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  double margin = std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < xv.size(); ++i) {
    out[i] = std::min(std::max(xv[i], lo), hi);
    margin = std::min(margin, std::min(std::abs(xv[i] - lo), std::abs(hi - xv[i])));
  }
  note_margin(margin);
  check_finite(out, "clamp");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, lo, hi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& xv = t.nodes_[xi].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) dx[i] += dy[i];
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(same_shape(av, bv), "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  check_finite(out, "add");
  const int ai = a.id, bi = b.id;
  return push(std::move(out), node(a).needs_grad || node(b).needs_grad, [ai, bi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (t.nodes_[ai].needs_grad) {
      Tensor& da = t.grad_buffer(ai);
      for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& db = t.grad_buffer(bi);
      for (int64_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(same_shape(av, bv), "sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  check_finite(out, "sub");
  const int ai = a.id, bi = b.id;
  return push(std::move(out), node(a).needs_grad || node(b).needs_grad, [ai, bi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (t.nodes_[ai].needs_grad) {
      Tensor& da = t.grad_buffer(ai);
      for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& db = t.grad_buffer(bi);
      for (int64_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(same_shape(av, bv), "mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  check_finite(out, "mul");
  const int ai = a.id, bi = b.id;
  return push(std::move(out), node(a).needs_grad || node(b).needs_grad, [ai, bi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& bv = t.nodes_[bi].value;
    if (t.nodes_[ai].needs_grad) {
      Tensor& da = t.grad_buffer(ai);
      for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor& db = t.grad_buffer(bi);
      for (int64_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var Tape::scalar_mul(Var x, double c) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  check_finite(out, "scalar_mul");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, c](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * c;
  });
}

Var Tape::add_const(Var x, double c) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  check_finite(out, "add_const");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var Tape::mul_const(Var x, Tensor c) {
  const Tensor& xv = value(x);
  require(same_shape(xv, c), "mul_const: shape mismatch " + shape_str(xv.shape) + " vs " + shape_str(c.shape));
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c[i];
  check_finite(out, "mul_const");
  auto cp = std::make_shared<Tensor>(std::move(c));
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, cp](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*cp)[i];
  });
}

Var Tape::reduce_mean(Var x) {
  const Tensor& xv = value(x);
  const double n = static_cast<double>(xv.size());
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  Tensor out = Tensor::scalar(s / n);
  check_finite(out, "reduce_mean");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, n](Tape& t, int self) {
    const double g = t.nodes_[self].grad[0] / n;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var Tape::reduce_sum(Var x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "reduce_sum");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const double g = t.nodes_[self].grad[0];
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var Tape::spatial_sum(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "spatial_sum: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1);
  const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({n, c});
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    double s = 0.0;
    const double* p = &xv.data[static_cast<size_t>(nc * hw)];
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[nc] = s;
  }
  check_finite(out, "spatial_sum");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, hw](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t nc = 0; nc < dy.size(); ++nc) {
      double* p = &dx.data[static_cast<size_t>(nc * hw)];
      for (int64_t i = 0; i < hw; ++i) p[i] += dy[nc];
    }
  });
}

Var Tape::channel_sum(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "channel_sum: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({n, 1, h, w});
  for (int ni = 0; ni < n; ++ni) {
    double* dst = &out.data[static_cast<size_t>(ni * hw)];
    for (int ci = 0; ci < c; ++ci) {
      const double* src = &xv.data[static_cast<size_t>((static_cast<int64_t>(ni) * c + ci) * hw)];
      for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  }
  check_finite(out, "channel_sum");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, c, hw](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    const int n = dy.dim(0);
    for (int ni = 0; ni < n; ++ni) {
      const double* g = &dy.data[static_cast<size_t>(ni * hw)];
      for (int ci = 0; ci < c; ++ci) {
        double* dst = &dx.data[static_cast<size_t>((static_cast<int64_t>(ni) * c + ci) * hw)];
        for (int64_t i = 0; i < hw; ++i) dst[i] += g[i];
      }
    }
  });
}

Var Tape::global_avg_pool(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "global_avg_pool: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1);
  const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({n, c});
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    double s = 0.0;
    const double* p = &xv.data[static_cast<size_t>(nc * hw)];
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[nc] = s / static_cast<double>(hw);
  }
  check_finite(out, "global_avg_pool");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, hw](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t nc = 0; nc < dy.size(); ++nc) {
      const double g = dy[nc] / static_cast<double>(hw);
      double* p = &dx.data[static_cast<size_t>(nc * hw)];
      for (int64_t i = 0; i < hw; ++i) p[i] += g;
    }
  });
}

Var Tape::concat_channels(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require(av.ndim() == 4 && bv.ndim() == 4, "concat_channels: expects (N,C,H,W) inputs");
  require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
          "concat_channels: mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), h = av.dim(2), w = av.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({n, ca + cb, h, w});
  for (int ni = 0; ni < n; ++ni) {
    std::copy_n(&av.data[static_cast<size_t>(ni * ca * hw)], ca * hw,
                &out.data[static_cast<size_t>(static_cast<int64_t>(ni) * (ca + cb) * hw)]);
    std::copy_n(&bv.data[static_cast<size_t>(ni * cb * hw)], cb * hw,
                &out.data[static_cast<size_t>(static_cast<int64_t>(ni) * (ca + cb) * hw + ca * hw)]);
  }
  const int ai = a.id, bi = b.id;
  return push(std::move(out), node(a).needs_grad || node(b).needs_grad,
              [ai, bi, ca, cb, hw](Tape& t, int self) {
                const Tensor& dy = t.nodes_[self].grad;
                const int n = dy.dim(0);
                if (t.nodes_[ai].needs_grad) {
                  Tensor& da = t.grad_buffer(ai);
                  for (int ni = 0; ni < n; ++ni) {
                    const double* src = &dy.data[static_cast<size_t>(static_cast<int64_t>(ni) * (ca + cb) * hw)];
                    double* dst = &da.data[static_cast<size_t>(static_cast<int64_t>(ni) * ca * hw)];
                    for (int64_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
                  }
                }
                if (t.nodes_[bi].needs_grad) {
                  Tensor& db = t.grad_buffer(bi);
                  for (int ni = 0; ni < n; ++ni) {
                    const double* src =
                        &dy.data[static_cast<size_t>(static_cast<int64_t>(ni) * (ca + cb) * hw + ca * hw)];
                    double* dst = &db.data[static_cast<size_t>(static_cast<int64_t>(ni) * cb * hw)];
                    for (int64_t i = 0; i < cb * hw; ++i) dst[i] += src[i];
                  }
                }
              });
}

Var Tape::reshape(Var x, Shape s) {
  const Tensor& xv = value(x);
  require(numel(s) == xv.size(), "reshape: element count mismatch " + shape_str(xv.shape) + " -> " + shape_str(s));
  Tensor out(std::move(s), xv.data);
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

// ---------------------------------------------------------------------------
// structured ops

Var Tape::softmax_channels(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "softmax_channels: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out(xv.shape);
  for (int ni = 0; ni < n; ++ni) {
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t base = static_cast<int64_t>(ni) * c * hw + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int ci = 0; ci < c; ++ci) mx = std::max(mx, xv.data[static_cast<size_t>(base + ci * hw)]);
      double z = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        const double e = std::exp(xv.data[static_cast<size_t>(base + ci * hw)] - mx);
        out.data[static_cast<size_t>(base + ci * hw)] = e;
        z += e;
      }
      for (int ci = 0; ci < c; ++ci) out.data[static_cast<size_t>(base + ci * hw)] /= z;
    }
  }
  check_finite(out, "softmax_channels");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, c, hw](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    const Tensor& y = t.nodes_[self].value;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    const int n = dy.dim(0);
    for (int ni = 0; ni < n; ++ni) {
      for (int64_t i = 0; i < hw; ++i) {
        const int64_t base = static_cast<int64_t>(ni) * c * hw + i;
        double dot = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          const size_t k = static_cast<size_t>(base + ci * hw);
          dot += dy.data[k] * y.data[k];
        }
        for (int ci = 0; ci < c; ++ci) {
          const size_t k = static_cast<size_t>(base + ci * hw);
          dx.data[k] += y.data[k] * (dy.data[k] - dot);
        }
      }
    }
  });
}

Var Tape::maxpool2x(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "maxpool2x: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "maxpool2x: H and W must be even, got " + shape_str(xv.shape));
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
  double margin = std::numeric_limits<double>::infinity();
  int64_t o = 0;
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const double* plane = &xv.data[static_cast<size_t>(nc * h * w)];
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j, ++o) {
        const int64_t i0 = static_cast<int64_t>(2 * i) * w + 2 * j;
        const int64_t idx[4] = {i0, i0 + 1, i0 + w, i0 + w + 1};
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (plane[idx[k]] > plane[idx[best]]) best = k;
        double second = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < 4; ++k)
          if (k != best) second = std::max(second, plane[idx[k]]);
        // Tied zeros (relu-clamped windows) are locally flat, not a kink;
        // the relu margin of the inputs already guards those crossings.
        if (plane[idx[best]] != 0.0 || second != 0.0)
          margin = std::min(margin, plane[idx[best]] - second);
        out[o] = plane[idx[best]];
        (*arg)[static_cast<size_t>(o)] = nc * h * w + idx[best];
      }
    }
  }
  note_margin(margin);
  check_finite(out, "maxpool2x");
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, arg](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    for (int64_t i = 0; i < dy.size(); ++i) dx[(*arg)[static_cast<size_t>(i)]] += dy[i];
  });
}

Var Tape::upsample2x(Var x) {
  const Tensor& xv = value(x);
  require(xv.ndim() == 4, "upsample2x: expects (N,C,H,W), got " + shape_str(xv.shape));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const double* src = &xv.data[static_cast<size_t>(nc * h * w)];
    double* dst = &out.data[static_cast<size_t>(nc * 4 * h * w)];
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double v = src[static_cast<int64_t>(i) * w + j];
        const int64_t o = static_cast<int64_t>(2 * i) * 2 * w + 2 * j;
        dst[o] = v;
        dst[o + 1] = v;
        dst[o + 2 * w] = v;
        dst[o + 2 * w + 1] = v;
      }
    }
  }
  const int xi = x.id;
  return push(std::move(out), node(x).needs_grad, [xi, h, w](Tape& t, int self) {
    const Tensor& dy = t.nodes_[self].grad;
    if (!t.nodes_[xi].needs_grad) return;
    Tensor& dx = t.grad_buffer(xi);
    const int64_t planes = dx.size() / (static_cast<int64_t>(h) * w);
    for (int64_t nc = 0; nc < planes; ++nc) {
      const double* g = &dy.data[static_cast<size_t>(nc * 4 * h * w)];
      double* d = &dx.data[static_cast<size_t>(nc * h * w)];
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const int64_t o = static_cast<int64_t>(2 * i) * 2 * w + 2 * j;
          d[static_cast<int64_t>(i) * w + j] += g[o] + g[o + 1] + g[o + 2 * w] + g[o + 2 * w + 1];
        }
      }
    }
  });
}

Var Tape::dense(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  require(xv.ndim() == 2, "dense: input must be (N,D), got " + shape_str(xv.shape));
  require(wv.ndim() == 2 && wv.dim(1) == xv.dim(1),
          "dense: weight must be (M,D) with D=" + std::to_string(xv.dim(1)) + ", got " + shape_str(wv.shape));
  require(bv.ndim() == 1 && bv.dim(0) == wv.dim(0), "dense: bias must be (M,)");
  const int n = xv.dim(0), d = xv.dim(1), m = wv.dim(0);
  Tensor out({n, m});
  {
    CMapRM X(xv.data.data(), n, d);
    CMapRM W(wv.data.data(), m, d);
    MapRM Y(out.data.data(), n, m);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.data[static_cast<size_t>(i) * m + j] += bv[j];
  }
  check_finite(out, "dense");
  const int xi = x.id, wi = w.id, bi = b.id;
  return push(std::move(out), node(x).needs_grad || node(w).needs_grad || node(b).needs_grad,
              [xi, wi, bi, n, d, m](Tape& t, int self) {
                const Tensor& dy = t.nodes_[self].grad;
                CMapRM dY(dy.data.data(), n, m);
                if (t.nodes_[xi].needs_grad) {
                  CMapRM W(t.nodes_[wi].value.data.data(), m, d);
                  MapRM dX(t.grad_buffer(xi).data.data(), n, d);
                  dX.noalias() += dY * W;
                }
                if (t.nodes_[wi].needs_grad) {
                  CMapRM X(t.nodes_[xi].value.data.data(), n, d);
                  MapRM dW(t.grad_buffer(wi).data.data(), m, d);
                  dW.noalias() += dY.transpose() * X;
                }
                if (t.nodes_[bi].needs_grad) {
                  Tensor& db = t.grad_buffer(bi);
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) db[j] += dy.data[static_cast<size_t>(i) * m + j];
                }
              });
}

Var Tape::conv2d(Var x, Var w, Var b, Pad pad) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  const ConvDims d = conv_dims(xv, wv, pad);
  require(bv.ndim() == 1 && bv.dim(0) == d.co, "conv2d: bias must be (Co,)");

  const int64_t howo = static_cast<int64_t>(d.ho) * d.wo;
  const int64_t rows = static_cast<int64_t>(d.n) * howo;
  const int64_t k = static_cast<int64_t>(d.ci) * d.kh * d.kw;
  Tensor out({d.n, d.co, d.ho, d.wo});
  {
    ConvScratch& ws = conv_scratch();
    MapRM col(ws.get(ws.col, rows * k), rows, k);
    im2col(xv, d, col);
    MapRM ymat(ws.get(ws.mat, rows * d.co), rows, d.co);
    CMapRM W(wv.data.data(), d.co, k);
    ymat.noalias() = col * W.transpose();
    for (int n = 0; n < d.n; ++n)
      for (int co = 0; co < d.co; ++co) {
        double* dst = &out.data[static_cast<size_t>((static_cast<int64_t>(n) * d.co + co) * howo)];
        const double bias = bv[co];
        for (int64_t i = 0; i < howo; ++i) dst[i] = ymat(static_cast<int64_t>(n) * howo + i, co) + bias;
      }
  }
  check_finite(out, "conv2d");

  const int xi = x.id, wi = w.id, bi = b.id;
  return push(std::move(out), node(x).needs_grad || node(w).needs_grad || node(b).needs_grad,
              [xi, wi, bi, d, k, howo](Tape& t, int self) {
                const Tensor& dy = t.nodes_[self].grad;
                const int64_t rows = static_cast<int64_t>(d.n) * howo;
                ConvScratch& ws = conv_scratch();
                MapRM dymat(ws.get(ws.mat, rows * d.co), rows, d.co);
                for (int n = 0; n < d.n; ++n)
                  for (int co = 0; co < d.co; ++co) {
                    const double* src =
                        &dy.data[static_cast<size_t>((static_cast<int64_t>(n) * d.co + co) * howo)];
                    for (int64_t i = 0; i < howo; ++i) dymat(static_cast<int64_t>(n) * howo + i, co) = src[i];
                  }
                const bool need_x = t.nodes_[xi].needs_grad;
                const bool need_w = t.nodes_[wi].needs_grad;
                if (need_w) {
                  MapRM col(ws.get(ws.col, rows * k), rows, k);
                  im2col(t.nodes_[xi].value, d, col);
                  MapRM dW(t.grad_buffer(wi).data.data(), d.co, k);
                  dW.noalias() += dymat.transpose() * col;
                }
                if (need_x) {
                  CMapRM W(t.nodes_[wi].value.data.data(), d.co, k);
                  MapRM dcol(ws.get(ws.dcol, rows * k), rows, k);
                  dcol.noalias() = dymat * W;
                  col2im(dcol, d, t.grad_buffer(xi));
                }
                if (t.nodes_[bi].needs_grad) {
                  Tensor& db = t.grad_buffer(bi);
                  for (int co = 0; co < d.co; ++co) db[co] += dymat.col(co).sum();
                }
              });
}

}  // namespace srscn::diff
