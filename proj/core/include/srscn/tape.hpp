#pragma once

#include <array>
#include <functional>
#include <limits>
#include <vector>

#include "srscn/tensor.hpp"

namespace srscn::diff {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Pad { Same, Valid };

/// Reverse-mode autodiff over a fixed operator set. Ops record themselves in
/// construction order, which is a topological order, and backward() replays
/// them once in reverse. Every op validates shapes and rejects non-finite
/// outputs (NumericError). Single-threaded per tape.
class Tape {
 public:
  Tape();

  /// Leaf holding a value; requires_grad marks it as a differentiation root.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // --- operator set ---
  Var conv2d(Var x, Var w, Var b, Pad pad);       // stride 1; x (N,C,H,W), w (Co,Ci,kh,kw), b (Co)
  Var upsample2x(Var x);                          // nearest neighbor, (N,C,H,W) -> (N,C,2H,2W)
  Var maxpool2x(Var x);                           // 2x2 window, stride 2; H, W must be even
  Var relu(Var x);
  Var dense(Var x, Var w, Var b);                 // x (N,D), w (M,D), b (M) -> (N,M)
  Var softmax_channels(Var x);                    // softmax over dim 1 of (N,C,H,W)
  Var sigmoid(Var x);
  Var add(Var a, Var b);                          // same shape
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                          // elementwise, same shape
  Var scalar_mul(Var x, double c);
  Var add_const(Var x, double c);
  Var mul_const(Var x, Tensor c);                 // elementwise by a constant tensor
  Var reduce_mean(Var x);                         // -> shape {1}
  Var reduce_sum(Var x);                          // -> shape {1}
  Var spatial_sum(Var x);                         // (N,C,H,W) -> (N,C)
  Var channel_sum(Var x);                         // (N,C,H,W) -> (N,1,H,W)
  Var global_avg_pool(Var x);                     // (N,C,H,W) -> (N,C)
  Var concat_channels(Var a, Var b);              // along dim 1
  Var log(Var x);
  Var pow(Var x, double exponent);
  Var clamp(Var x, double lo, double hi);
  Var reshape(Var x, Shape s);

  /// Accumulates gradients of a scalar output into every node that needs
  /// them. Leaf gradients are then readable via grad().
  void backward(Var scalar_output);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v; zeros if untouched.
  const Tensor& grad(Var v) const;

  /// Smallest distance of any relu input to its kink, any clamp input to a
  /// clamp bound, and any pow(<1) base to zero, over all ops recorded so
  /// far. Finite-difference callers use this to keep probes away from
  /// nondifferentiable points.
  double kink_margin() const { return kink_margin_; }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, int self)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, int)> back);
  Tensor& grad_buffer(int id);
  const Node& node(Var v) const;
  void note_margin(double m);

  std::vector<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();

  friend struct TapeOps;
};

}  // namespace srscn::diff
