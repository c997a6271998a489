#pragma once

#include <string>

#include "gdeform/geometry.hpp"

namespace gdeform {

// "PCF1" binary point clouds: magic PCF1, u32 LE count N, then N x 3
// float32 LE (x, y, z). Deformation-field files reuse the same container.
void save_pcf(const std::string& path, const PointCloud& cloud);
PointCloud load_pcf(const std::string& path);

// Pose file: 16 whitespace-separated decimals, row-major 4x4 camera-to-world.
void save_pose(const std::string& path, const PoseSE3& pose);
PoseSE3 load_pose(const std::string& path);

// Binary PGM (P5), 8-bit, values round(255 * v) clamped to [0,255].
void save_pgm(const std::string& path, const Mat& values);

// "MKF1" float mask: magic MKF1, u32 H, u32 W, H*W float32 LE row-major.
// Used for dataset ground-truth silhouettes where 8-bit would lose precision.
void save_mask(const std::string& path, const SilhouetteMask& mask);
SilhouetteMask load_mask(const std::string& path);

}  // namespace gdeform
