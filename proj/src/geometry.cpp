#include "gdeform/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gdeform {

NormalizeResult normalize_to_unit_cube(const PointCloud& cloud) {
  if (cloud.size() < 1) throw InvalidGeometry("normalize: empty cloud");
  if (!cloud.finite()) throw InvalidGeometry("normalize: non-finite coordinates");

  Vec3 lo = cloud.points.colwise().minCoeff();
  Vec3 hi = cloud.points.colwise().maxCoeff();
  Vec3 center = 0.5 * (lo + hi);
  double scale = (hi - lo).maxCoeff();
  if (scale <= 0.0) scale = 1.0;

  NormalizeResult out;
  out.cloud.id = cloud.id;
  out.cloud.points = (cloud.points.rowwise() - center.transpose()) / scale;
  out.scale = scale;
  out.center = center;
  return out;
}

Projection project_point(const Vec3& p, const PoseSE3& pose,
                         const CameraIntrinsics& intr) {
  Vec3 cam = pose.rotation.transpose() * (p - pose.translation);
  Projection pr;
  pr.depth = cam.z();
  if (std::abs(cam.z()) < 1e-12) {
    pr.u = 0.0;
    pr.v = 0.0;
    return pr;
  }
  pr.u = intr.fx * cam.x() / cam.z() + intr.cx;
  pr.v = intr.fy * cam.y() / cam.z() + intr.cy;
  return pr;
}

VisibilityMask compute_visibility(const PointCloud& cloud, const PoseSE3& pose,
                                  const CameraIntrinsics& intr,
                                  int splat_radius_px, int max_visible,
                                  double eps_z) {
  const int n = cloud.size();
  VisibilityMask mask(n, 0);
  const int h = intr.height;
  const int w = intr.width;
  if (h <= 0 || w <= 0) return mask;

  std::vector<Projection> proj(n);
  for (int i = 0; i < n; ++i)
    proj[i] = project_point(cloud.points.row(i).transpose(), pose, intr);

  // Min-depth buffer over every point's splat footprint.
  Mat zbuf = Mat::Constant(h, w, std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    if (!(proj[i].depth > 0) || !std::isfinite(proj[i].u) ||
        !std::isfinite(proj[i].v))
      continue;
    int px = static_cast<int>(std::floor(proj[i].u));
    int py = static_cast<int>(std::floor(proj[i].v));
    for (int dy = -splat_radius_px; dy <= splat_radius_px; ++dy) {
      for (int dx = -splat_radius_px; dx <= splat_radius_px; ++dx) {
        int x = px + dx, y = py + dy;
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        zbuf(y, x) = std::min(zbuf(y, x), proj[i].depth);
      }
    }
  }

  std::vector<int> survivors;
  for (int i = 0; i < n; ++i) {
    if (!(proj[i].depth > 0) || !std::isfinite(proj[i].u) ||
        !std::isfinite(proj[i].v))
      continue;
    int px = static_cast<int>(std::floor(proj[i].u));
    int py = static_cast<int>(std::floor(proj[i].v));
    if (px < 0 || px >= w || py < 0 || py >= h) continue;
    if (proj[i].depth <= zbuf(py, px) + eps_z) survivors.push_back(i);
  }

  if (max_visible > 0 && static_cast<int>(survivors.size()) > max_visible) {
    std::stable_sort(survivors.begin(), survivors.end(), [&](int a, int b) {
      if (proj[a].depth != proj[b].depth) return proj[a].depth < proj[b].depth;
      return a < b;
    });
    survivors.resize(max_visible);
  }
  for (int i : survivors) mask[i] = 1;
  return mask;
}

std::vector<int> visible_indices(const VisibilityMask& mask) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

KnnGraph build_knn_graph(const PointCloud& cloud, int k) {
  const int n = cloud.size();
  if (n <= k) throw InsufficientPoints("build_knn_graph: need N > k");
  if (k < 1) throw InsufficientPoints("build_knn_graph: k must be >= 1");

  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n);
  g.weights.resize(n);
  std::vector<std::pair<double, int>> cand(n - 1);
  for (int i = 0; i < n; ++i) {
    int m = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = (cloud.points.row(i) - cloud.points.row(j)).squaredNorm();
      cand[m++] = {d2, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    g.neighbors[i].resize(k);
    g.weights[i].assign(k, 1.0);
    for (int q = 0; q < k; ++q) g.neighbors[i][q] = cand[q].second;
  }
  return g;
}

PoseSE3 relative_pose(const PoseSE3& primary, const PoseSE3& aux) {
  return primary.inverse().compose(aux);
}

Vec12 flatten_pose(const PoseSE3& pose) {
  Vec12 v;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v(3 * r + c) = pose.rotation(r, c);
  v.tail<3>() = pose.translation;
  return v;
}

}  // namespace gdeform
