#pragma once

#include <vector>

#include "gdeform/alignment.hpp"
#include "gdeform/encoding.hpp"

namespace gdeform {

struct DeformationField {
  Mat vectors;  // N x 3 displacements, same ordering as the template
};

// Per-point input projection over [positional encoding | conditioning row |
// time embedding], residual self-attention blocks over the N points, and a
// zero-initialized linear head to 3D.
struct VelocityNetParams {
  Mat in_w, in_b;
  std::vector<TransformerBlockParams> blocks;
  Mat head_w, head_b;
  int pos_bands = 4;
  int time_dim = 16;
};

struct VelocityNetVars {
  Var in_w, in_b;
  std::vector<TransformerBlockVars> blocks;
  Var head_w, head_b;
  int pos_bands = 4;
  int time_dim = 16;
};

VelocityNetVars lift(Tape& tape, const VelocityNetParams& p,
                     bool requires_grad = false);

// x_t = (1 - t) x0 + t x1, index-aligned.
PointCloud interpolate_path(const PointCloud& x0, const PointCloud& x1,
                            double t);

// Constant straight-line velocity u = x1 - x0.
DeformationField target_velocity(const PointCloud& x0, const PointCloud& x1);

Var velocity_forward_op(Tape& tape, const Mat& positions, double t,
                        Var conditioning, const VelocityNetVars& p);

DeformationField velocity_forward(const PointCloud& x_t, double t,
                                  const ConditioningContext& c,
                                  const VelocityNetParams& p);

// D = v(S, 0, c); T_hat = S + D.
std::pair<DeformationField, PointCloud> single_step_deform(
    const PointCloud& tmpl, const ConditioningContext& c,
    const VelocityNetParams& p);

// Explicit Euler with `steps` uniform steps; steps = 1 reproduces
// single_step_deform bit-for-bit.
PointCloud integrate_ode(const PointCloud& tmpl, const ConditioningContext& c,
                         const VelocityNetParams& p, int steps);

// Single-sample flow-matching loss: mean over points of the squared norm of
// v(x_t, t, c) - (x1 - x0).
double fm_loss(const VelocityNetParams& p, const PointCloud& x0,
               const PointCloud& x1, const ConditioningContext& c,
               double t_sample);

}  // namespace gdeform
