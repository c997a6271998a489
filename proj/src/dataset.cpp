#include "gdeform/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "gdeform/io.hpp"
#include "gdeform/rng.hpp"

namespace fs = std::filesystem;

namespace gdeform {
namespace {

void quantize_f32(Mat& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
}

double sgn_pow(double v, double e) {
  double a = std::pow(std::abs(v), e);
  return v < 0 ? -a : a;
}

std::string pair_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%04d", index);
  return buf;
}

}  // namespace

CameraIntrinsics dataset_intrinsics(const DatasetSpec& spec) {
  CameraIntrinsics intr;
  intr.fx = spec.focal;
  intr.fy = spec.focal;
  intr.cx = spec.image_size / 2.0;
  intr.cy = spec.image_size / 2.0;
  intr.width = spec.image_size;
  intr.height = spec.image_size;
  return intr;
}

PoseSE3 look_at_pose(double azimuth, double elevation, double distance) {
  Vec3 center(distance * std::cos(azimuth) * std::cos(elevation),
              distance * std::sin(azimuth) * std::cos(elevation),
              distance * std::sin(elevation));
  Vec3 forward = (-center).normalized();
  Vec3 up(0, 0, 1);
  Vec3 right = up.cross(forward).normalized();
  Vec3 down = forward.cross(right);
  PoseSE3 pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = center;
  return pose;
}

Vec3 superquadric_point(double eta, double omega, const Vec3& scale,
                        double eps1, double eps2) {
  double ce = std::cos(eta), se = std::sin(eta);
  double co = std::cos(omega), so = std::sin(omega);
  return Vec3(scale.x() * sgn_pow(ce, eps1) * sgn_pow(co, eps2),
              scale.y() * sgn_pow(ce, eps1) * sgn_pow(so, eps2),
              scale.z() * sgn_pow(se, eps1));
}

std::vector<SyntheticPair> generate_synthetic_pairs(const DatasetSpec& spec,
                                                    uint64_t seed) {
  if (spec.family != "superquadric")
    throw ConfigError("unknown synthetic family: " + spec.family);
  CameraIntrinsics intr = dataset_intrinsics(spec);

  std::vector<SyntheticPair> pairs;
  pairs.reserve(static_cast<size_t>(spec.count));
  for (int pi = 0; pi < spec.count; ++pi) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(pi)));
    SyntheticPair pair;
    pair.id = pair_dir_name(pi);

    // Identical (eta, omega) samples give analytic dense correspondence.
    Mat tmpl(spec.n, 3), tgt(spec.n, 3);
    Vec3 axis_scale(rng.uniform(0.7, 1.5), rng.uniform(0.7, 1.5),
                    rng.uniform(0.7, 1.5));
    double eps1 = rng.uniform(0.65, 1.4);
    double eps2 = rng.uniform(0.65, 1.4);
    for (int i = 0; i < spec.n; ++i) {
      double eta = std::asin(rng.uniform(-1.0, 1.0));
      double omega = rng.uniform(-M_PI, M_PI);
      tmpl.row(i) =
          superquadric_point(eta, omega, Vec3(1, 1, 1), 1.0, 1.0).transpose();
      tgt.row(i) =
          superquadric_point(eta, omega, axis_scale, eps1, eps2).transpose();
    }
    PointCloud raw_tmpl{tmpl, pair.id + "/template"};
    PointCloud raw_tgt{tgt, pair.id + "/target"};
    pair.template_cloud = normalize_to_unit_cube(raw_tmpl).cloud;
    pair.target_cloud = normalize_to_unit_cube(raw_tgt).cloud;
    quantize_f32(pair.template_cloud.points);
    quantize_f32(pair.target_cloud.points);
    pair.gt_field.vectors =
        pair.target_cloud.points - pair.template_cloud.points;

    // Template views on an upper-hemisphere ring.
    double az0 = rng.uniform(0.0, 2.0 * M_PI);
    double ring_elev = 35.0 * M_PI / 180.0;
    for (int k = 0; k < spec.k_views; ++k) {
      double az = az0 + 2.0 * M_PI * k / spec.k_views;
      PoseSE3 pose = look_at_pose(az, ring_elev, spec.cam_distance);
      ViewEntry entry;
      entry.map = synthetic_feature_map(pair.template_cloud, pose, intr,
                                        spec.d_feat, spec.feature_seed,
                                        spec.patch_size);
      quantize_f32(entry.map.grid);
      VisibilityMask vis = compute_visibility(
          pair.template_cloud, pose, intr, spec.splat_radius_px,
          spec.m_visible, spec.eps_z);
      entry.features = sample_features_at(entry.map, pair.template_cloud, vis);
      pair.template_views.views.push_back(std::move(entry));

      SilhouetteTarget sil;
      sil.pose = pose;
      sil.intr = intr;
      sil.mask = render_silhouette(pair.target_cloud, pose, intr,
                                   spec.mask_sigma_px,
                                   spec.mask_support_sigmas);
      quantize_f32(sil.mask.values);
      pair.gt_masks.push_back(std::move(sil));
    }

    // Single target observation from a random hemisphere viewpoint.
    double obs_az = rng.uniform(0.0, 2.0 * M_PI);
    double obs_el = rng.uniform(20.0, 70.0) * M_PI / 180.0;
    pair.observation_pose = look_at_pose(obs_az, obs_el, spec.cam_distance);
    pair.target_view =
        synthetic_feature_map(pair.target_cloud, pair.observation_pose, intr,
                              spec.d_feat, spec.feature_seed, spec.patch_size);
    quantize_f32(pair.target_view.grid);

    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_dataset(const std::string& dir, const DatasetSpec& spec,
                  uint64_t seed, const std::vector<SyntheticPair>& pairs) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["family"] = spec.family;
  j["count"] = static_cast<int>(pairs.size());
  j["seed"] = seed;
  j["n"] = spec.n;
  j["k_views"] = spec.k_views;
  j["d_feat"] = spec.d_feat;
  j["m_visible"] = spec.m_visible;
  j["image_size"] = spec.image_size;
  j["patch_size"] = spec.patch_size;
  j["focal"] = spec.focal;
  j["cam_distance"] = spec.cam_distance;
  j["mask_sigma_px"] = spec.mask_sigma_px;
  j["mask_support_sigmas"] = spec.mask_support_sigmas;
  j["splat_radius_px"] = spec.splat_radius_px;
  j["eps_z"] = spec.eps_z;
  j["feature_seed"] = spec.feature_seed;
  std::ofstream idx(fs::path(dir) / "index.json");
  if (!idx) throw FormatError("cannot write dataset index in " + dir);
  idx << j.dump(2) << "\n";

  for (size_t p = 0; p < pairs.size(); ++p) {
    const SyntheticPair& pair = pairs[p];
    fs::path pdir = fs::path(dir) / pair_dir_name(static_cast<int>(p));
    fs::create_directories(pdir);
    save_pcf((pdir / "template.pcf1").string(), pair.template_cloud);
    save_pcf((pdir / "target.pcf1").string(), pair.target_cloud);
    for (size_t k = 0; k < pair.template_views.views.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof(name), "view_%02d.fmf1", static_cast<int>(k));
      save_feature_map((pdir / name).string(),
                       pair.template_views.views[k].map);
      std::snprintf(name, sizeof(name), "mask_%02d.mkf1", static_cast<int>(k));
      save_mask((pdir / name).string(), pair.gt_masks[k].mask);
    }
    save_feature_map((pdir / "target_view.fmf1").string(), pair.target_view);
  }
}

std::vector<SyntheticPair> load_dataset(const std::string& dir,
                                        DatasetSpec* spec_out,
                                        uint64_t* seed_out) {
  std::ifstream idx(fs::path(dir) / "index.json");
  if (!idx) throw FormatError("missing dataset index in " + dir);
  nlohmann::json j;
  idx >> j;
  DatasetSpec spec;
  spec.family = j.value("family", spec.family);
  spec.count = j.value("count", 0);
  spec.n = j.value("n", spec.n);
  spec.k_views = j.value("k_views", spec.k_views);
  spec.d_feat = j.value("d_feat", spec.d_feat);
  spec.m_visible = j.value("m_visible", spec.m_visible);
  spec.image_size = j.value("image_size", spec.image_size);
  spec.patch_size = j.value("patch_size", spec.patch_size);
  spec.focal = j.value("focal", spec.focal);
  spec.cam_distance = j.value("cam_distance", spec.cam_distance);
  spec.mask_sigma_px = j.value("mask_sigma_px", spec.mask_sigma_px);
  spec.mask_support_sigmas =
      j.value("mask_support_sigmas", spec.mask_support_sigmas);
  spec.splat_radius_px = j.value("splat_radius_px", spec.splat_radius_px);
  spec.eps_z = j.value("eps_z", spec.eps_z);
  spec.feature_seed = j.value("feature_seed", spec.feature_seed);
  if (spec_out) *spec_out = spec;
  if (seed_out) *seed_out = j.value("seed", 0ULL);

  std::vector<SyntheticPair> pairs;
  for (int p = 0; p < spec.count; ++p) {
    fs::path pdir = fs::path(dir) / pair_dir_name(p);
    SyntheticPair pair;
    pair.id = pair_dir_name(p);
    pair.template_cloud = load_pcf((pdir / "template.pcf1").string());
    pair.template_cloud.id = pair.id + "/template";
    pair.target_cloud = load_pcf((pdir / "target.pcf1").string());
    pair.target_cloud.id = pair.id + "/target";
    if (pair.template_cloud.size() != pair.target_cloud.size())
      throw FormatError("dataset pair clouds not index-aligned: " + pair.id);
    pair.gt_field.vectors =
        pair.target_cloud.points - pair.template_cloud.points;
    for (int k = 0; k < spec.k_views; ++k) {
      char name[32];
      std::snprintf(name, sizeof(name), "view_%02d.fmf1", k);
      ViewEntry entry;
      entry.map = load_feature_map((pdir / name).string());
      VisibilityMask vis = compute_visibility(
          pair.template_cloud, entry.map.pose, entry.map.intr,
          spec.splat_radius_px, spec.m_visible, spec.eps_z);
      entry.features = sample_features_at(entry.map, pair.template_cloud, vis);

      SilhouetteTarget sil;
      sil.pose = entry.map.pose;
      sil.intr = entry.map.intr;
      std::snprintf(name, sizeof(name), "mask_%02d.mkf1", k);
      sil.mask = load_mask((pdir / name).string());
      pair.gt_masks.push_back(std::move(sil));
      pair.template_views.views.push_back(std::move(entry));
    }
    pair.target_view = load_feature_map((pdir / "target_view.fmf1").string());
    pair.observation_pose = pair.target_view.pose;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace gdeform
