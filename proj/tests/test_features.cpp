#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "gdeform/dataset.hpp"
#include "gdeform/features.hpp"
#include "test_util.hpp"

using namespace gdeform;
using namespace gdeform::testutil;
namespace fs = std::filesystem;

namespace {

PatchFeatureMap tiny_map(int hp, int wp, int d, int patch = 4) {
  PatchFeatureMap m;
  m.hp = hp;
  m.wp = wp;
  m.patch_size = patch;
  m.intr.fx = m.intr.fy = 100;
  m.intr.cx = m.intr.cy = hp * patch / 2.0;
  m.intr.width = wp * patch;
  m.intr.height = hp * patch;
  m.grid = Mat::Zero(hp * wp, d);
  return m;
}

fs::path test_dir() {
  fs::path dir = fs::temp_directory_path() / "gdeform_feat_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("FMF1 round trip preserves everything bit-exactly") {
  Rng rng(23);
  PatchFeatureMap m = tiny_map(2, 2, 4);
  m.pose = random_pose(rng);
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 4; ++c)
      m.grid(p, c) = static_cast<float>(rng.uniform(-1, 1));
  std::string path = (test_dir() / "map.fmf1").string();
  save_feature_map(path, m);
  PatchFeatureMap back = load_feature_map(path);
  CHECK(back.hp == 2);
  CHECK(back.wp == 2);
  CHECK(back.dim() == 4);
  CHECK(back.patch_size == 4);
  CHECK(back.grid == m.grid);
  CHECK((back.pose.matrix() - m.pose.matrix()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.intr.fx == m.intr.fx);
  CHECK(back.intr.width == m.intr.width);
}

TEST_CASE("FMF1 format errors") {
  fs::path dir = test_dir();
  {
    std::ofstream bad(dir / "bad.fmf1", std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS(load_feature_map((dir / "bad.fmf1").string()), FormatError);

  // Valid header but truncated payload.
  Rng rng(29);
  PatchFeatureMap m = tiny_map(4, 4, 8);
  m.pose = random_pose(rng);
  std::string full = (dir / "full.fmf1").string();
  save_feature_map(full, m);
  std::ifstream in(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  bytes.resize(bytes.size() - 17);
  {
    std::ofstream out(dir / "short.fmf1", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_feature_map((dir / "short.fmf1").string()), FormatError);
}

TEST_CASE("synthetic_feature_map is deterministic and empty off-frame") {
  Rng rng(31);
  PointCloud c = random_cloud(rng, 64, 0.4);
  CameraIntrinsics intr;
  intr.fx = intr.fy = 96;
  intr.cx = intr.cy = 32;
  intr.width = intr.height = 64;
  PoseSE3 cam = look_at_pose(0.7, 0.6, 2.2);

  PatchFeatureMap a = synthetic_feature_map(c, cam, intr, 32, 9);
  PatchFeatureMap b = synthetic_feature_map(c, cam, intr, 32, 9);
  CHECK(a.grid == b.grid);

  // Cloud behind the camera: all-zero grid.
  PoseSE3 away = cam;
  away.translation = Vec3(0, 0, 10);
  away.rotation = Mat3::Identity();
  PatchFeatureMap empty = synthetic_feature_map(c, away, intr, 32, 9);
  CHECK(empty.grid.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(synthetic_feature_map(c, cam, intr, 4, 9), DimensionError);
}

TEST_CASE("synthetic features are cross-view consistent") {
  // One isolated point visible from two views gets identical encodings.
  PointCloud c;
  c.points.resize(1, 3);
  c.points << 0.05, -0.02, 0.11;
  CameraIntrinsics intr;
  intr.fx = intr.fy = 96;
  intr.cx = intr.cy = 32;
  intr.width = intr.height = 64;
  PatchFeatureMap v1 =
      synthetic_feature_map(c, look_at_pose(0.3, 0.5, 2.2), intr, 32, 0);
  PatchFeatureMap v2 =
      synthetic_feature_map(c, look_at_pose(2.1, 0.9, 2.2), intr, 32, 0);
  Eigen::RowVectorXd f1, f2;
  for (int p = 0; p < v1.patches(); ++p)
    if (v1.grid.row(p).cwiseAbs().maxCoeff() > 0) f1 = v1.grid.row(p);
  for (int p = 0; p < v2.patches(); ++p)
    if (v2.grid.row(p).cwiseAbs().maxCoeff() > 0) f2 = v2.grid.row(p);
  REQUIRE(f1.size() == 32);
  REQUIRE(f2.size() == 32);
  double cos_sim = f1.dot(f2) / (f1.norm() * f2.norm());
  CHECK(cos_sim >= 0.99);
}

TEST_CASE("sample_features_at bilinear lookup") {
  PatchFeatureMap m = tiny_map(2, 2, 3);
  // Patch (row 0, col 0) center is at pixel (2, 2); centers are 4px apart.
  m.grid << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  PoseSE3 cam;  // camera at origin looking +z
  m.pose = cam;

  auto cloud_projecting_to = [&](double u, double v) {
    PointCloud c;
    c.points.resize(1, 3);
    double z = 1.0;
    c.points << (u - m.intr.cx) * z / m.intr.fx,
        (v - m.intr.cy) * z / m.intr.fy, z;
    return c;
  };
  VisibilityMask vis{1};

  SUBCASE("patch center returns the patch verbatim") {
    auto set = sample_features_at(m, cloud_projecting_to(2.0, 2.0), vis);
    REQUIRE(set.count() == 1);
    CHECK(set.features.row(0).isApprox(m.grid.row(0), 1e-12));
    CHECK(set.point_indices[0] == 0);
  }
  SUBCASE("midway between two horizontal patch centers averages them") {
    auto set = sample_features_at(m, cloud_projecting_to(4.0, 2.0), vis);
    REQUIRE(set.count() == 1);
    Eigen::RowVectorXd expect = 0.5 * (m.grid.row(0) + m.grid.row(1));
    CHECK(set.features.row(0).isApprox(expect, 1e-12));
  }
  SUBCASE("arbitrary position matches a scalar bilinear oracle") {
    double u = 3.1, v = 4.7;
    auto set = sample_features_at(m, cloud_projecting_to(u, v), vis);
    REQUIRE(set.count() == 1);
    double pu = u / 4.0 - 0.5, pv = v / 4.0 - 0.5;
    int c0 = static_cast<int>(std::floor(pu));
    int r0 = static_cast<int>(std::floor(pv));
    double fu = pu - c0, fv = pv - r0;
    for (int ch = 0; ch < 3; ++ch) {
      double expect = (1 - fu) * (1 - fv) * m.grid(r0 * 2 + c0, ch) +
                      fu * (1 - fv) * m.grid(r0 * 2 + c0 + 1, ch) +
                      (1 - fu) * fv * m.grid((r0 + 1) * 2 + c0, ch) +
                      fu * fv * m.grid((r0 + 1) * 2 + c0 + 1, ch);
      CHECK(set.features(0, ch) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("out-of-frame visible points are excluded and counted") {
    PointCloud c;
    c.points.resize(2, 3);
    c.points << 0, 0, 1, 5, 5, 1;  // second projects far out of frame
    VisibilityMask both{1, 1};
    auto set = sample_features_at(m, c, both);
    CHECK(set.count() == 1);
    CHECK(set.skipped_out_of_frame == 1);
  }
}

TEST_CASE("sampled features are convex combinations of tapped patches") {
  Rng rng(37);
  PatchFeatureMap m = tiny_map(4, 4, 8);
  m.grid = random_mat(rng, 16, 8);
  PoseSE3 cam;
  m.pose = cam;
  PointCloud c = random_cloud(rng, 30, 0.05);
  c.points.col(2).array() += 1.0;
  VisibilityMask vis(30, 1);
  auto set = sample_features_at(m, c, vis);
  for (int i = 0; i < set.count(); ++i) {
    for (int ch = 0; ch < 8; ++ch) {
      CHECK(set.features(i, ch) >= m.grid.col(ch).minCoeff() - 1e-12);
      CHECK(set.features(i, ch) <= m.grid.col(ch).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("image_similarity basics") {
  Rng rng(41);
  PatchFeatureMap a = tiny_map(2, 2, 6);
  a.grid = random_mat(rng, 4, 6);
  PatchFeatureMap neg = a;
  neg.grid = -a.grid;
  PatchFeatureMap zero = tiny_map(2, 2, 6);

  CHECK(image_similarity(a, a) == doctest::Approx(1.0));
  CHECK(image_similarity(a, neg) == doctest::Approx(-1.0));
  CHECK(image_similarity(a, zero) == doctest::Approx(0.0));

  PatchFeatureMap wrong = tiny_map(2, 2, 5);
  CHECK_THROWS_AS(image_similarity(a, wrong), DimensionError);

  SUBCASE("symmetric and scale invariant") {
    PatchFeatureMap b = tiny_map(2, 2, 6);
    b.grid = random_mat(rng, 4, 6);
    double ab = image_similarity(a, b);
    CHECK(image_similarity(b, a) == doctest::Approx(ab));
    PatchFeatureMap scaled = b;
    scaled.grid *= 17.5;
    CHECK(image_similarity(a, scaled) == doctest::Approx(ab));
  }
}
