#pragma once

#include <limits>
#include <vector>

#include "gdeform/geometry.hpp"
#include "gdeform/tape.hpp"

namespace gdeform {

struct LossWeights {
  double fm = 1.0;
  double cd = 100.0;
  double lap = 1.0;
  double arap = 1.0;
  double reg = 1.0;
  double sil = 5.0;

  bool is_valid() const {
    return fm >= 0 && cd >= 0 && lap >= 0 && arap >= 0 && reg >= 0 &&
           sil >= 0 && std::isfinite(fm + cd + lap + arap + reg + sil);
  }
};

struct LossBreakdown {
  double fm = 0, cd = 0, lap = 0, arap = 0, reg = 0, sil = 0;
  double total = 0;
};

struct SilhouetteTarget {
  SilhouetteMask mask;
  PoseSE3 pose;
  CameraIntrinsics intr;
};

// --- Distances and metrics ------------------------------------------------

// Training Chamfer: symmetric sum of squared nearest-neighbor distances.
double chamfer_loss(const PointCloud& pred, const PointCloud& gt,
                    bool accelerated = false);

// Evaluation Chamfer: both directions averaged per set (still squared).
double metric_cd(const PointCloud& pred, const PointCloud& gt);

enum class EmdMode { Auto, Exact, Approximate };

struct EmdResult {
  double value = 0.0;
  bool approximate = false;
};

// Minimum over bijections of the mean unsquared L2 distance. Exact Hungarian
// up to exact_limit points, greedy + swap refinement beyond (flagged).
EmdResult metric_emd_full(const PointCloud& pred, const PointCloud& gt,
                          EmdMode mode = EmdMode::Auto, int exact_limit = 512);
double metric_emd(const PointCloud& pred, const PointCloud& gt);

// Nearest index in `to` for every point of `from` (ties to lower index).
// The grid-accelerated variant returns exactly the brute-force result.
std::vector<int> nearest_indices_brute(const Mat& from, const Mat& to);
std::vector<int> nearest_indices_grid(const Mat& from, const Mat& to);

// --- Structural losses -----------------------------------------------------

double laplacian_loss(const PointCloud& pred, const PointCloud& src,
                      const KnnGraph& graph);

double arap_loss(const PointCloud& pred, const PointCloud& src,
                 const KnnGraph& graph);

// Proper rotation minimizing sum ||dst - R src||^2 over edge rows; among
// ties the identity-closest optimum (identity preferred when optimal).
Mat3 kabsch_rotation(const Mat& edges_src, const Mat& edges_dst);

double reg_loss(const Mat& field);

// --- Silhouettes ------------------------------------------------------------

// Soft Gaussian point splat with per-pixel over-compositing:
// value = 1 - prod_points(1 - exp(-r^2 / (2 sigma^2))). Points behind the
// camera are skipped. support_sigmas bounds each splat's radius (in sigmas);
// infinity evaluates the exact product over the whole frame.
SilhouetteMask render_silhouette(
    const PointCloud& cloud, const PoseSE3& pose, const CameraIntrinsics& intr,
    double sigma_px,
    double support_sigmas = std::numeric_limits<double>::infinity());

// Sum over views of the mean-pixel squared difference.
double silhouette_loss(
    const PointCloud& pred, const std::vector<SilhouetteTarget>& targets,
    double sigma_px,
    double support_sigmas = std::numeric_limits<double>::infinity());

// IoU of masks binarized at threshold; both-empty pairs count as 1.
double metric_siou(const SilhouetteMask& pred, const SilhouetteMask& gt,
                   double threshold = 0.5);

// --- Combined objective -----------------------------------------------------

struct TotalLossInputs {
  PointCloud pred;
  PointCloud target;
  PointCloud source;
  KnnGraph graph;  // built on source
  Mat field;       // N x 3 deformation
  Mat velocity_pred;
  Mat velocity_target;
  std::vector<SilhouetteTarget> sil_targets;
  double sigma_px = 1.5;
  double support_sigmas = std::numeric_limits<double>::infinity();
};

LossBreakdown total_loss(const TotalLossInputs& in, const LossWeights& w);

// --- Differentiable versions (gradients w.r.t. the pred position matrix) ----

Var chamfer_sum_op(Tape& tape, Var pred, const Mat& gt);
Var laplacian_op(Tape& tape, Var pred, const Mat& src, const KnnGraph& graph);
Var arap_op(Tape& tape, Var pred, const Mat& src, const KnnGraph& graph);
Var silhouette_mse_op(Tape& tape, Var pred,
                      const std::vector<SilhouetteTarget>& targets,
                      double sigma_px, double support_sigmas);

}  // namespace gdeform
