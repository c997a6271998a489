#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdeform/geometry.hpp"

namespace gdeform {

// Per-view grid of patch features with the camera that produced it.
// Patches are stored flattened row-major: patch (row, col) -> row * wp + col.
struct PatchFeatureMap {
  Mat grid;  // (hp * wp) x D
  int hp = 0, wp = 0;
  int patch_size = 0;
  PoseSE3 pose;
  CameraIntrinsics intr;

  int dim() const { return static_cast<int>(grid.cols()); }
  int patches() const { return static_cast<int>(grid.rows()); }
  Eigen::RowVectorXd patch(int row, int col) const {
    return grid.row(row * wp + col);
  }
};

// Features attached to a subset of cloud points (row i belongs to
// point_indices[i] of the source cloud).
struct PointFeatureSet {
  Mat features;                   // M x D
  std::vector<int> point_indices; // M distinct indices into the cloud
  int skipped_out_of_frame = 0;

  int count() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

// "FMF1" feature file: magic, u32 hp, u32 wp, u32 D, u32 patch_size,
// 16 float64 row-major camera-to-world, 4 float64 (fx, fy, cx, cy),
// u32 H, u32 W, then hp*wp*D float32 LE row-major (row, col, channel).
PatchFeatureMap load_feature_map(const std::string& path);
void save_feature_map(const std::string& path, const PatchFeatureMap& map);

// Deterministic stand-in for foundation features: each patch carries a fixed
// sinusoidal encoding of the world-space coordinate of the visible point
// whose projection lands in the patch nearest its center (zeros when empty).
// The same surface point therefore yields identical features across views.
// patch_size = 0 picks the largest 16x16 grid that fits the image.
PatchFeatureMap synthetic_feature_map(const PointCloud& cloud,
                                      const PoseSE3& pose,
                                      const CameraIntrinsics& intr, int d,
                                      uint64_t seed, int patch_size = 0);

// The encoding used by synthetic_feature_map, exposed for tests.
Eigen::RowVectorXd synthetic_point_encoding(const Vec3& world, int d,
                                            uint64_t seed);

// Bilinear lookup of the patch grid at each visible point's projected patch
// coordinates. Visible points projecting out of frame are excluded and
// counted in the result.
PointFeatureSet sample_features_at(const PatchFeatureMap& map,
                                   const PointCloud& cloud,
                                   const VisibilityMask& visibility);

// Cosine similarity of mean-pooled (over non-empty patches) features.
// Zero-vector operand gives 0.
double image_similarity(const PatchFeatureMap& a, const PatchFeatureMap& b);

}  // namespace gdeform
