#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gdeform/errors.hpp"

namespace gdeform {

using Mat = Eigen::MatrixXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;

// Ordered point set in a normalized canonical frame. Point ordering carries
// dense correspondence; no operation in this library ever permutes rows.
struct PointCloud {
  Mat points;  // N x 3
  std::string id;

  int size() const { return static_cast<int>(points.rows()); }
  bool finite() const { return points.allFinite(); }
};

// Camera-to-world rigid transform.
struct PoseSE3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static PoseSE3 identity() { return {}; }

  bool is_valid(double tol = 1e-6) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    Mat3 rtr = rotation * rotation.transpose();
    return (rtr - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  PoseSE3 inverse() const {
    PoseSE3 out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  // this ∘ other (apply other first, then this).
  PoseSE3 compose(const PoseSE3& other) const {
    PoseSE3 out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
  }
};

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int height = 0, width = 0;

  bool is_valid() const {
    return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
  }
};

// Exact Euclidean k-NN over a cloud; self excluded, ties broken by lower
// index, uniform edge weights.
struct KnnGraph {
  int k = 0;
  std::vector<std::vector<int>> neighbors;     // N lists of k indices
  std::vector<std::vector<double>> weights;    // matching nonnegative weights
};

struct SilhouetteMask {
  Mat values;  // H x W, entries in [0,1]

  int height() const { return static_cast<int>(values.rows()); }
  int width() const { return static_cast<int>(values.cols()); }
};

struct NormalizeResult {
  PointCloud cloud;
  double scale = 1.0;
  Vec3 center = Vec3::Zero();
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame z; <= 0 means behind the camera
};

using VisibilityMask = std::vector<uint8_t>;

// Recenter at the bbox midpoint and scale so the longest axis has length 1.
// A degenerate cloud (single point / zero extent) maps to the origin with
// scale 1. Returned (scale, center) invert the transform.
NormalizeResult normalize_to_unit_cube(const PointCloud& cloud);

// Pinhole projection into a camera with camera-to-world pose `pose`.
Projection project_point(const Vec3& p, const PoseSE3& pose,
                         const CameraIntrinsics& intr);

// Z-buffer point-splat visibility. A point is visible iff it projects
// in-frame with depth > 0 and, at its own pixel, no other point's splat is
// closer by more than eps_z. If max_visible > 0 and more points survive,
// only the max_visible nearest (by depth, ties to lower index) are kept.
VisibilityMask compute_visibility(const PointCloud& cloud, const PoseSE3& pose,
                                  const CameraIntrinsics& intr,
                                  int splat_radius_px = 2,
                                  int max_visible = 0,
                                  double eps_z = 0.01);

std::vector<int> visible_indices(const VisibilityMask& mask);

KnnGraph build_knn_graph(const PointCloud& cloud, int k);

// (primary)^-1 ∘ aux, so that primary ∘ result == aux.
PoseSE3 relative_pose(const PoseSE3& primary, const PoseSE3& aux);

// Row-major rotation entries r11..r33 followed by (tx, ty, tz). This order
// is part of the checkpoint layout contract.
Vec12 flatten_pose(const PoseSE3& pose);

}  // namespace gdeform
