#pragma once

#include <string>
#include <vector>

#include "gdeform/features.hpp"
#include "gdeform/flow.hpp"
#include "gdeform/losses.hpp"
#include "gdeform/view_aggregation.hpp"

namespace gdeform {

// A training/evaluation example. Template and target are sampled at the same
// parameter-space points, so dense correspondence is analytic and
// gt_field == target - template exactly.
struct SyntheticPair {
  std::string id;
  PointCloud template_cloud;
  PointCloud target_cloud;
  ViewSet template_views;
  PatchFeatureMap target_view;
  std::vector<SilhouetteTarget> gt_masks;  // target silhouettes at view poses
  DeformationField gt_field;
  PoseSE3 observation_pose;
};

struct DatasetSpec {
  std::string family = "superquadric";
  int count = 64;
  int n = 256;
  int k_views = 4;
  int d_feat = 32;
  int m_visible = 128;
  int image_size = 64;
  int patch_size = 4;
  double focal = 96.0;
  double cam_distance = 2.2;
  double mask_sigma_px = 1.5;
  double mask_support_sigmas = 4.0;
  int splat_radius_px = 2;
  double eps_z = 0.01;
  uint64_t feature_seed = 0;
};

CameraIntrinsics dataset_intrinsics(const DatasetSpec& spec);

// Camera on the unit-up hemisphere looking at the origin.
PoseSE3 look_at_pose(double azimuth, double elevation, double distance);

// Superquadric surface point at angles (eta, omega) with axis scales and
// exponents; (1,1,1)/(1,1) is the unit sphere.
Vec3 superquadric_point(double eta, double omega, const Vec3& scale,
                        double eps1, double eps2);

// Deterministic per seed; every float-valued artifact is quantized to f32 so
// that saving and reloading a dataset reproduces it exactly.
std::vector<SyntheticPair> generate_synthetic_pairs(const DatasetSpec& spec,
                                                    uint64_t seed);

void save_dataset(const std::string& dir, const DatasetSpec& spec,
                  uint64_t seed, const std::vector<SyntheticPair>& pairs);

std::vector<SyntheticPair> load_dataset(const std::string& dir,
                                        DatasetSpec* spec_out = nullptr,
                                        uint64_t* seed_out = nullptr);

}  // namespace gdeform
