#include "gdeform/flow.hpp"

namespace gdeform {

VelocityNetVars lift(Tape& tape, const VelocityNetParams& p, bool rg) {
  VelocityNetVars v;
  v.in_w = tape.leaf(p.in_w, rg);
  v.in_b = tape.leaf(p.in_b, rg);
  for (const auto& b : p.blocks) v.blocks.push_back(lift(tape, b, rg));
  v.head_w = tape.leaf(p.head_w, rg);
  v.head_b = tape.leaf(p.head_b, rg);
  v.pos_bands = p.pos_bands;
  v.time_dim = p.time_dim;
  return v;
}

PointCloud interpolate_path(const PointCloud& x0, const PointCloud& x1,
                            double t) {
  if (x0.size() != x1.size())
    throw CorrespondenceError("interpolate_path: clouds not index-aligned");
  if (!(t >= 0.0 && t <= 1.0))
    throw InvalidTime("interpolate_path: t must be in [0,1]");
  PointCloud out;
  out.id = x0.id;
  out.points = (1.0 - t) * x0.points + t * x1.points;
  return out;
}

DeformationField target_velocity(const PointCloud& x0, const PointCloud& x1) {
  if (x0.size() != x1.size())
    throw CorrespondenceError("target_velocity: clouds not index-aligned");
  return DeformationField{x1.points - x0.points};
}

Var velocity_forward_op(Tape& tape, const Mat& positions, double t,
                        Var conditioning, const VelocityNetVars& p) {
  const int n = static_cast<int>(positions.rows());
  if (tape.rows(conditioning) != n)
    throw DimensionError("velocity_forward: conditioning rows != N");
  if (!(t >= 0.0 && t <= 1.0))
    throw InvalidTime("velocity_forward: t must be in [0,1]");

  Mat pos_enc = sincos_positional(positions, p.pos_bands);
  Mat time_rows = time_embedding(t, p.time_dim).replicate(n, 1);
  Var x = tape.concat_cols(
      {tape.constant(pos_enc), conditioning, tape.constant(time_rows)});
  if (tape.cols(x) != tape.rows(p.in_w))
    throw DimensionError("velocity_forward: input projection width mismatch");
  x = tape.add_rows(tape.matmul(x, p.in_w), p.in_b);
  for (const auto& b : p.blocks) x = transformer_block_op(tape, x, b);
  return tape.add_rows(tape.matmul(x, p.head_w), p.head_b);
}

DeformationField velocity_forward(const PointCloud& x_t, double t,
                                  const ConditioningContext& c,
                                  const VelocityNetParams& p) {
  Tape tape;
  Var out = velocity_forward_op(tape, x_t.points, t,
                                tape.constant(c.features), lift(tape, p));
  return DeformationField{tape.val(out)};
}

std::pair<DeformationField, PointCloud> single_step_deform(
    const PointCloud& tmpl, const ConditioningContext& c,
    const VelocityNetParams& p) {
  DeformationField field = velocity_forward(tmpl, 0.0, c, p);
  PointCloud deformed;
  deformed.id = tmpl.id;
  deformed.points = tmpl.points + 1.0 * field.vectors;
  return {std::move(field), std::move(deformed)};
}

PointCloud integrate_ode(const PointCloud& tmpl, const ConditioningContext& c,
                         const VelocityNetParams& p, int steps) {
  if (steps < 1) throw InvalidSteps("integrate_ode: steps must be >= 1");
  PointCloud x = tmpl;
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    DeformationField v = velocity_forward(x, static_cast<double>(k) / steps, c, p);
    x.points = x.points + dt * v.vectors;
  }
  return x;
}

double fm_loss(const VelocityNetParams& p, const PointCloud& x0,
               const PointCloud& x1, const ConditioningContext& c,
               double t_sample) {
  PointCloud xt = interpolate_path(x0, x1, t_sample);
  DeformationField v = velocity_forward(xt, t_sample, c, p);
  Mat diff = v.vectors - (x1.points - x0.points);
  return diff.squaredNorm() / diff.rows();
}

}  // namespace gdeform
