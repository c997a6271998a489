#include "gdeform/losses.hpp"

#include <algorithm>
#include <cmath>

#include "gdeform/assignment.hpp"

namespace gdeform {
namespace {

// Scalar form shared by every nearest-neighbor path so that accelerated and
// brute-force variants produce bit-identical distances.
inline double sq_dist3(const Mat& a, int i, const Mat& b, int j) {
  double dx = a(i, 0) - b(j, 0);
  double dy = a(i, 1) - b(j, 1);
  double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

void require_cloud(const PointCloud& c, const char* what) {
  if (c.size() < 1) throw EmptyCloud(std::string(what) + ": empty cloud");
}

void require_aligned(const PointCloud& a, const PointCloud& b,
                     const char* what) {
  if (a.size() != b.size())
    throw CorrespondenceError(std::string(what) + ": clouds not index-aligned");
}

}  // namespace

std::vector<int> nearest_indices_brute(const Mat& from, const Mat& to) {
  const int n = static_cast<int>(from.rows());
  const int m = static_cast<int>(to.rows());
  std::vector<int> nn(n, -1);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int bj = -1;
    for (int j = 0; j < m; ++j) {
      double d2 = sq_dist3(from, i, to, j);
      if (bj < 0 || d2 < best) {  // first candidate also absorbs NaN inputs
        best = d2;
        bj = j;
      }
    }
    nn[i] = bj;
  }
  return nn;
}

std::vector<int> nearest_indices_grid(const Mat& from, const Mat& to) {
  const int n = static_cast<int>(from.rows());
  const int m = static_cast<int>(to.rows());
  std::vector<int> nn(n, -1);
  if (m == 0) return nn;

  Vec3 lo = to.colwise().minCoeff();
  Vec3 hi = to.colwise().maxCoeff();
  double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  int cells = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(m))));
  double h = extent / cells;

  auto cell_of = [&](double x, int axis) {
    return static_cast<int>(std::floor((x - lo(axis)) / h));
  };
  std::vector<std::vector<int>> buckets(
      static_cast<size_t>(cells) * cells * cells);
  auto bucket_index = [&](int cx, int cy, int cz) {
    cx = std::min(cells - 1, std::max(0, cx));
    cy = std::min(cells - 1, std::max(0, cy));
    cz = std::min(cells - 1, std::max(0, cz));
    return (static_cast<size_t>(cz) * cells + cy) * cells + cx;
  };
  for (int j = 0; j < m; ++j)
    buckets[bucket_index(cell_of(to(j, 0), 0), cell_of(to(j, 1), 1),
                         cell_of(to(j, 2), 2))]
        .push_back(j);

  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(from(i, 0)) || !std::isfinite(from(i, 1)) ||
        !std::isfinite(from(i, 2))) {
      double best = 0;
      int bj = -1;
      for (int j = 0; j < m; ++j) {
        double d2 = sq_dist3(from, i, to, j);
        if (bj < 0 || d2 < best) {
          best = d2;
          bj = j;
        }
      }
      nn[i] = bj;
      continue;
    }
    int qx = cell_of(from(i, 0), 0);
    int qy = cell_of(from(i, 1), 1);
    int qz = cell_of(from(i, 2), 2);
    double best = std::numeric_limits<double>::infinity();
    int bj = -1;
    int max_ring = 2 * cells + 2 +
                   std::max({std::abs(qx), std::abs(qy), std::abs(qz)});
    for (int r = 0;; ++r) {
      // Points in cells at Chebyshev ring r are at least (r-1)*h away, so
      // once that bound strictly exceeds the best distance no closer or
      // equal-tie candidate remains.
      if (bj >= 0 && r >= 1) {
        double bound = (r - 1) * h;
        if (bound * bound > best) break;
      }
      if (r > max_ring) break;
      for (int cz = qz - r; cz <= qz + r; ++cz) {
        for (int cy = qy - r; cy <= qy + r; ++cy) {
          for (int cx = qx - r; cx <= qx + r; ++cx) {
            int cheb = std::max({std::abs(cx - qx), std::abs(cy - qy),
                                 std::abs(cz - qz)});
            if (cheb != r) continue;
            if (cx < 0 || cx >= cells || cy < 0 || cy >= cells || cz < 0 ||
                cz >= cells)
              continue;
            for (int j :
                 buckets[(static_cast<size_t>(cz) * cells + cy) * cells + cx]) {
              double d2 = sq_dist3(from, i, to, j);
              if (bj < 0 || d2 < best || (d2 == best && j < bj)) {
                best = d2;
                bj = j;
              }
            }
          }
        }
      }
    }
    nn[i] = bj;
  }
  return nn;
}

double chamfer_loss(const PointCloud& pred, const PointCloud& gt,
                    bool accelerated) {
  require_cloud(pred, "chamfer_loss");
  require_cloud(gt, "chamfer_loss");
  auto nn = accelerated ? nearest_indices_grid(pred.points, gt.points)
                        : nearest_indices_brute(pred.points, gt.points);
  auto rn = accelerated ? nearest_indices_grid(gt.points, pred.points)
                        : nearest_indices_brute(gt.points, pred.points);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < pred.size(); ++i)
    s1 += sq_dist3(pred.points, i, gt.points, nn[i]);
  for (int j = 0; j < gt.size(); ++j)
    s2 += sq_dist3(gt.points, j, pred.points, rn[j]);
  return s1 + s2;
}

double metric_cd(const PointCloud& pred, const PointCloud& gt) {
  require_cloud(pred, "metric_cd");
  require_cloud(gt, "metric_cd");
  auto nn = nearest_indices_brute(pred.points, gt.points);
  auto rn = nearest_indices_brute(gt.points, pred.points);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < pred.size(); ++i)
    s1 += sq_dist3(pred.points, i, gt.points, nn[i]);
  for (int j = 0; j < gt.size(); ++j)
    s2 += sq_dist3(gt.points, j, pred.points, rn[j]);
  return s1 / pred.size() + s2 / gt.size();
}

EmdResult metric_emd_full(const PointCloud& pred, const PointCloud& gt,
                          EmdMode mode, int exact_limit) {
  require_cloud(pred, "metric_emd");
  require_cloud(gt, "metric_emd");
  if (pred.size() != gt.size())
    throw CardinalityError("metric_emd: clouds must have equal cardinality");
  const int n = pred.size();

  Mat cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost(i, j) = std::sqrt(sq_dist3(pred.points, i, gt.points, j));

  bool exact = mode == EmdMode::Exact ||
               (mode == EmdMode::Auto && n <= exact_limit);
  std::vector<int> assign =
      exact ? hungarian_assignment(cost) : greedy_swap_assignment(cost);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += cost(i, assign[i]);
  return {sum / n, !exact};
}

double metric_emd(const PointCloud& pred, const PointCloud& gt) {
  return metric_emd_full(pred, gt).value;
}

double laplacian_loss(const PointCloud& pred, const PointCloud& src,
                      const KnnGraph& graph) {
  require_aligned(pred, src, "laplacian_loss");
  if (static_cast<int>(graph.neighbors.size()) != src.size())
    throw CorrespondenceError("laplacian_loss: graph built on different cloud");
  double loss = 0.0;
  for (int i = 0; i < src.size(); ++i) {
    const auto& nb = graph.neighbors[i];
    Vec3 cp = Vec3::Zero(), cs = Vec3::Zero();
    for (int j : nb) {
      cp += pred.points.row(j).transpose();
      cs += src.points.row(j).transpose();
    }
    cp /= static_cast<double>(nb.size());
    cs /= static_cast<double>(nb.size());
    Vec3 dp = pred.points.row(i).transpose() - cp;
    Vec3 ds = src.points.row(i).transpose() - cs;
    loss += (dp - ds).squaredNorm();
  }
  return loss;
}

Mat3 kabsch_rotation(const Mat& edges_src, const Mat& edges_dst) {
  if (edges_src.rows() != edges_dst.rows() || edges_src.cols() != 3 ||
      edges_dst.cols() != 3)
    throw DimensionError("kabsch_rotation: edge sets must be m x 3");
  if (edges_src.rows() < 1)
    throw DimensionError("kabsch_rotation: need at least one edge");

  Mat3 c = edges_src.transpose() * edges_dst;
  if (!c.allFinite() || c.norm() < 1e-30) return Mat3::Identity();

  Eigen::JacobiSVD<Mat3> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Mat3 r = v * d * u.transpose();

  // Declared tie-break: identity whenever it is also optimal.
  double res_r = (edges_dst - edges_src * r.transpose()).squaredNorm();
  double res_i = (edges_dst - edges_src).squaredNorm();
  if (res_i <= res_r + 1e-12 * std::max(1.0, res_r)) return Mat3::Identity();
  return r;
}

double arap_loss(const PointCloud& pred, const PointCloud& src,
                 const KnnGraph& graph) {
  require_aligned(pred, src, "arap_loss");
  if (static_cast<int>(graph.neighbors.size()) != src.size())
    throw CorrespondenceError("arap_loss: graph built on different cloud");
  double loss = 0.0;
  for (int i = 0; i < src.size(); ++i) {
    const auto& nb = graph.neighbors[i];
    const int k = static_cast<int>(nb.size());
    Mat es(k, 3), ed(k, 3);
    for (int q = 0; q < k; ++q) {
      es.row(q) = src.points.row(i) - src.points.row(nb[q]);
      ed.row(q) = pred.points.row(i) - pred.points.row(nb[q]);
    }
    Mat3 r = kabsch_rotation(es, ed);
    for (int q = 0; q < k; ++q) {
      double w = graph.weights[i][q];
      Vec3 resid = ed.row(q).transpose() - r * es.row(q).transpose();
      loss += w * resid.squaredNorm();
    }
  }
  return loss;
}

double reg_loss(const Mat& field) {
  if (field.rows() < 1) return 0.0;
  return field.squaredNorm() / field.rows();
}

SilhouetteMask render_silhouette(const PointCloud& cloud, const PoseSE3& pose,
                                 const CameraIntrinsics& intr, double sigma_px,
                                 double support_sigmas) {
  if (sigma_px <= 0) throw ConfigError("render_silhouette: sigma_px must be > 0");
  const int h = intr.height, w = intr.width;
  Mat prod = Mat::Ones(h, w);
  const double inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
  const bool bounded = std::isfinite(support_sigmas);
  const double radius = bounded ? support_sigmas * sigma_px : 0.0;

  for (int i = 0; i < cloud.size(); ++i) {
    Projection pr =
        project_point(cloud.points.row(i).transpose(), pose, intr);
    if (!(pr.depth > 0) || !std::isfinite(pr.u) || !std::isfinite(pr.v))
      continue;
    int x0 = 0, x1 = w - 1, y0 = 0, y1 = h - 1;
    if (bounded) {
      x0 = std::max(0, static_cast<int>(std::ceil(pr.u - radius - 0.5)));
      x1 = std::min(w - 1, static_cast<int>(std::floor(pr.u + radius - 0.5)));
      y0 = std::max(0, static_cast<int>(std::ceil(pr.v - radius - 0.5)));
      y1 = std::min(h - 1, static_cast<int>(std::floor(pr.v + radius - 0.5)));
    }
    for (int y = y0; y <= y1; ++y) {
      double dy = (y + 0.5) - pr.v;
      for (int x = x0; x <= x1; ++x) {
        double dx = (x + 0.5) - pr.u;
        double r2 = dx * dx + dy * dy;
        if (bounded && r2 > radius * radius) continue;
        double g = std::exp(-r2 * inv2s2);
        prod(y, x) *= std::max(1.0 - g, 1e-12);
      }
    }
  }
  SilhouetteMask mask;
  mask.values = Mat::Ones(h, w) - prod;
  return mask;
}

double silhouette_loss(const PointCloud& pred,
                       const std::vector<SilhouetteTarget>& targets,
                       double sigma_px, double support_sigmas) {
  if (targets.empty()) throw DimensionError("silhouette_loss: no views");
  double loss = 0.0;
  for (const auto& t : targets) {
    SilhouetteMask r = render_silhouette(pred, t.pose, t.intr, sigma_px,
                                         support_sigmas);
    if (r.height() != t.mask.height() || r.width() != t.mask.width())
      throw DimensionError("silhouette_loss: mask size mismatch");
    loss += (r.values - t.mask.values).squaredNorm() /
            (static_cast<double>(r.height()) * r.width());
  }
  return loss;
}

double metric_siou(const SilhouetteMask& pred, const SilhouetteMask& gt,
                   double threshold) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw DimensionError("metric_siou: mask size mismatch");
  long inter = 0, uni = 0;
  for (int r = 0; r < pred.height(); ++r) {
    for (int c = 0; c < pred.width(); ++c) {
      bool a = pred.values(r, c) >= threshold;
      bool b = gt.values(r, c) >= threshold;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

LossBreakdown total_loss(const TotalLossInputs& in, const LossWeights& w) {
  if (!w.is_valid()) throw ConfigError("total_loss: invalid loss weights");
  LossBreakdown out;
  const int n = in.pred.size();
  if (in.velocity_pred.rows() != in.velocity_target.rows() ||
      in.velocity_pred.cols() != 3 || in.velocity_target.cols() != 3)
    throw CorrespondenceError("total_loss: velocity shape mismatch");
  out.fm = (in.velocity_pred - in.velocity_target).squaredNorm() /
           in.velocity_pred.rows();
  out.cd = chamfer_loss(in.pred, in.target);
  out.lap = laplacian_loss(in.pred, in.source, in.graph);
  out.arap = arap_loss(in.pred, in.source, in.graph);
  if (in.field.rows() != n)
    throw CorrespondenceError("total_loss: field rows != N");
  out.reg = reg_loss(in.field);
  out.sil = in.sil_targets.empty()
                ? 0.0
                : silhouette_loss(in.pred, in.sil_targets, in.sigma_px,
                                  in.support_sigmas);
  out.total = w.fm * out.fm + w.cd * out.cd + w.lap * out.lap +
              w.arap * out.arap + w.reg * out.reg + w.sil * out.sil;
  return out;
}

// --- Differentiable ops -----------------------------------------------------

Var chamfer_sum_op(Tape& tape, Var pred, const Mat& gt) {
  const Mat& p = tape.val(pred);
  if (p.rows() < 1 || gt.rows() < 1)
    throw EmptyCloud("chamfer_sum_op: empty cloud");
  auto nn = nearest_indices_brute(p, gt);
  auto rn = nearest_indices_brute(gt, p);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < p.rows(); ++i) s1 += sq_dist3(p, i, gt, nn[i]);
  for (int j = 0; j < gt.rows(); ++j) s2 += sq_dist3(gt, j, p, rn[j]);
  Mat value(1, 1);
  value(0, 0) = s1 + s2;
  return tape.custom(
      std::move(value), tape.requires_grad(pred),
      [pred, gt, nn = std::move(nn), rn = std::move(rn)](Tape& t, Var self) {
        double g = t.upstream(self)(0, 0);
        const Mat& p2 = t.val(pred);
        Mat grad = Mat::Zero(p2.rows(), 3);
        for (int i = 0; i < p2.rows(); ++i)
          grad.row(i) += 2.0 * g * (p2.row(i) - gt.row(nn[i]));
        for (int j = 0; j < gt.rows(); ++j)
          grad.row(rn[j]) += 2.0 * g * (p2.row(rn[j]) - gt.row(j));
        t.accum(pred, std::move(grad));
      });
}

Var laplacian_op(Tape& tape, Var pred, const Mat& src, const KnnGraph& graph) {
  const Mat& p = tape.val(pred);
  if (p.rows() != src.rows())
    throw CorrespondenceError("laplacian_op: clouds not index-aligned");
  const int n = static_cast<int>(p.rows());
  Mat resid(n, 3);
  for (int i = 0; i < n; ++i) {
    const auto& nb = graph.neighbors[i];
    Eigen::RowVector3d cp = Eigen::RowVector3d::Zero();
    Eigen::RowVector3d cs = Eigen::RowVector3d::Zero();
    for (int j : nb) {
      cp += p.row(j);
      cs += src.row(j);
    }
    cp /= static_cast<double>(nb.size());
    cs /= static_cast<double>(nb.size());
    resid.row(i) = (p.row(i) - cp) - (src.row(i) - cs);
  }
  Mat value(1, 1);
  value(0, 0) = resid.squaredNorm();
  return tape.custom(
      std::move(value), tape.requires_grad(pred),
      [pred, graph, resid = std::move(resid)](Tape& t, Var self) {
        double g = t.upstream(self)(0, 0);
        const int n2 = static_cast<int>(resid.rows());
        Mat grad = Mat::Zero(n2, 3);
        for (int i = 0; i < n2; ++i) {
          grad.row(i) += 2.0 * g * resid.row(i);
          const auto& nb = graph.neighbors[i];
          double invk = 1.0 / static_cast<double>(nb.size());
          for (int j : nb) grad.row(j) -= 2.0 * g * invk * resid.row(i);
        }
        t.accum(pred, std::move(grad));
      });
}

Var arap_op(Tape& tape, Var pred, const Mat& src, const KnnGraph& graph) {
  const Mat& p = tape.val(pred);
  if (p.rows() != src.rows())
    throw CorrespondenceError("arap_op: clouds not index-aligned");
  const int n = static_cast<int>(p.rows());
  std::vector<Mat3> rots(static_cast<size_t>(n));
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& nb = graph.neighbors[i];
    const int k = static_cast<int>(nb.size());
    Mat es(k, 3), ed(k, 3);
    for (int q = 0; q < k; ++q) {
      es.row(q) = src.row(i) - src.row(nb[q]);
      ed.row(q) = p.row(i) - p.row(nb[q]);
    }
    Mat3 r = kabsch_rotation(es, ed);
    rots[static_cast<size_t>(i)] = r;
    for (int q = 0; q < k; ++q)
      loss += graph.weights[i][q] *
              (ed.row(q).transpose() - r * es.row(q).transpose()).squaredNorm();
  }
  Mat value(1, 1);
  value(0, 0) = loss;
  // R_i held fixed in the adjoint; at the optimum the rotation term's
  // derivative vanishes, so this is the full gradient.
  return tape.custom(
      std::move(value), tape.requires_grad(pred),
      [pred, graph, src, rots = std::move(rots)](Tape& t, Var self) {
        double g = t.upstream(self)(0, 0);
        const Mat& p2 = t.val(pred);
        const int n2 = static_cast<int>(p2.rows());
        Mat grad = Mat::Zero(n2, 3);
        for (int i = 0; i < n2; ++i) {
          const auto& nb = graph.neighbors[i];
          const Mat3& r = rots[static_cast<size_t>(i)];
          for (size_t q = 0; q < nb.size(); ++q) {
            int j = nb[q];
            Eigen::RowVector3d es = src.row(i) - src.row(j);
            Eigen::RowVector3d ed = p2.row(i) - p2.row(j);
            Eigen::RowVector3d resid = ed - (r * es.transpose()).transpose();
            Eigen::RowVector3d
                contrib = 2.0 * g * graph.weights[i][q] * resid;
            grad.row(i) += contrib;
            grad.row(j) -= contrib;
          }
        }
        t.accum(pred, std::move(grad));
      });
}

Var silhouette_mse_op(Tape& tape, Var pred,
                      const std::vector<SilhouetteTarget>& targets,
                      double sigma_px, double support_sigmas) {
  if (targets.empty()) throw DimensionError("silhouette_mse_op: no views");
  const Mat& p = tape.val(pred);
  PointCloud tmp;
  tmp.points = p;
  double loss = 0.0;
  std::vector<Mat> prods;
  prods.reserve(targets.size());
  for (const auto& tgt : targets) {
    SilhouetteMask r =
        render_silhouette(tmp, tgt.pose, tgt.intr, sigma_px, support_sigmas);
    if (r.height() != tgt.mask.height() || r.width() != tgt.mask.width())
      throw DimensionError("silhouette_mse_op: mask size mismatch");
    prods.push_back(Mat::Ones(r.height(), r.width()) - r.values);
    loss += (r.values - tgt.mask.values).squaredNorm() /
            (static_cast<double>(r.height()) * r.width());
  }
  Mat value(1, 1);
  value(0, 0) = loss;
  return tape.custom(
      std::move(value), tape.requires_grad(pred),
      [pred, targets, sigma_px, support_sigmas,
       prods = std::move(prods)](Tape& t, Var self) {
        double gup = t.upstream(self)(0, 0);
        const Mat& p2 = t.val(pred);
        Mat grad = Mat::Zero(p2.rows(), 3);
        const double inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
        const bool bounded = std::isfinite(support_sigmas);
        const double radius = bounded ? support_sigmas * sigma_px : 0.0;
        for (size_t k = 0; k < targets.size(); ++k) {
          const auto& tgt = targets[k];
          const Mat& prod = prods[k];
          const int h = tgt.intr.height, w = tgt.intr.width;
          const double inv_hw = 1.0 / (static_cast<double>(h) * w);
          const Mat3& rot = tgt.pose.rotation;
          for (int i = 0; i < p2.rows(); ++i) {
            Vec3 world = p2.row(i).transpose();
            Vec3 cam = rot.transpose() * (world - tgt.pose.translation);
            double z = cam.z();
            if (!(z > 0)) continue;
            double u = tgt.intr.fx * cam.x() / z + tgt.intr.cx;
            double v = tgt.intr.fy * cam.y() / z + tgt.intr.cy;
            if (!std::isfinite(u) || !std::isfinite(v)) continue;
            Vec3 du_dp = (tgt.intr.fx / z) * rot.col(0) -
                         (tgt.intr.fx * cam.x() / (z * z)) * rot.col(2);
            Vec3 dv_dp = (tgt.intr.fy / z) * rot.col(1) -
                         (tgt.intr.fy * cam.y() / (z * z)) * rot.col(2);
            int x0 = 0, x1 = w - 1, y0 = 0, y1 = h - 1;
            if (bounded) {
              x0 = std::max(0, static_cast<int>(std::ceil(u - radius - 0.5)));
              x1 = std::min(w - 1,
                            static_cast<int>(std::floor(u + radius - 0.5)));
              y0 = std::max(0, static_cast<int>(std::ceil(v - radius - 0.5)));
              y1 = std::min(h - 1,
                            static_cast<int>(std::floor(v + radius - 0.5)));
            }
            Vec3 acc = Vec3::Zero();
            for (int y = y0; y <= y1; ++y) {
              double dy = (y + 0.5) - v;
              for (int x = x0; x <= x1; ++x) {
                double dx = (x + 0.5) - u;
                double r2 = dx * dx + dy * dy;
                if (bounded && r2 > radius * radius) continue;
                double gval = std::exp(-r2 * inv2s2);
                double s = 1.0 - gval;
                if (s <= 1e-12) continue;  // clamped factor, zero derivative
                double mask_v = 1.0 - prod(y, x);
                double dL_dmask =
                    2.0 * (mask_v - tgt.mask.values(y, x)) * inv_hw;
                double dL_dg = dL_dmask * prod(y, x) / s;
                double dg_du = 2.0 * inv2s2 * gval * dx;
                double dg_dv = 2.0 * inv2s2 * gval * dy;
                acc += dL_dg * (dg_du * du_dp + dg_dv * dv_dp);
              }
            }
            grad.row(i) += gup * acc.transpose();
          }
        }
        t.accum(pred, std::move(grad));
      });
}

}  // namespace gdeform
