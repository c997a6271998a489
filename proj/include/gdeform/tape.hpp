#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "gdeform/geometry.hpp"

namespace gdeform {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over dense double matrices.
// Ops record adjoint closures; backward() replays them in reverse creation
// order. A tape is single-use: build one graph, call backward once.
// Forward-only graphs (no leaf requires grad) skip closure allocation.
class Tape {
 public:
  Var leaf(Mat value, bool requires_grad = false);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  const Mat& val(Var v) const { return node(v).value; }
  const Mat& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).rg; }
  int rows(Var v) const { return static_cast<int>(node(v).value.rows()); }
  int cols(Var v) const { return static_cast<int>(node(v).value.cols()); }
  size_t size() const { return nodes_.size(); }

  void backward(Var scalar_loss);

  // Custom ops (e.g. geometric losses) supply their own adjoint. The closure
  // reads upstream(self) and must accum() into its parents.
  Var custom(Mat value, bool requires_grad,
             std::function<void(Tape&, Var)> back);
  const Mat& upstream(Var self) const { return node(self).grad; }
  void accum(Var target, const Mat& g);
  void accum(Var target, Mat&& g);  // move into a first-touch gradient

  // Elementwise and broadcast
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var add_rows(Var a, Var row);  // broadcast a 1xD row over an NxD matrix
  Var gelu(Var a);

  // Linear algebra
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);

  // Structure
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int offset, int count);
  Var gather_rows(Var a, std::vector<int> indices);

  // Rowwise nonlinearities
  Var softmax_rows(Var a);
  Var l2_normalize_rows(Var a);  // zero rows map to zero rows
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

  // Fused per-head softmax(Qh Kh^T / sqrt(dh)) Vh over column-split heads,
  // concatenated back to full width. Inputs are the already-projected
  // Q/K/V streams. Equivalent to composing slice/matmul/softmax ops but one
  // node, which keeps the training loop's hot path cheap.
  Var multihead_attention(Var qp, Var kp, Var vp, int heads);

  // Reductions
  Var sum_sq(Var a);  // 1x1, squared Frobenius norm

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool rg = false;
    std::function<void(Tape&)> back;
  };

  Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
  Var push(Mat value, bool rg);

  std::deque<Node> nodes_;
};

}  // namespace gdeform
