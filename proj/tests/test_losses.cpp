#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "gdeform/assignment.hpp"
#include "gdeform/losses.hpp"
#include "test_util.hpp"

using namespace gdeform;
using namespace gdeform::testutil;

namespace {

PointCloud make_cloud(std::initializer_list<std::initializer_list<double>> pts) {
  PointCloud c;
  c.points.resize(static_cast<int>(pts.size()), 3);
  int r = 0;
  for (const auto& row : pts) {
    int j = 0;
    for (double v : row) c.points(r, j++) = v;
    ++r;
  }
  return c;
}

double brute_emd(const PointCloud& a, const PointCloud& b) {
  const int n = a.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double sum = 0;
    for (int i = 0; i < n; ++i)
      sum += (a.points.row(i) - b.points.row(perm[i])).norm();
    best = std::min(best, sum / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("chamfer_loss examples (sum form)") {
  PointCloud a = make_cloud({{0, 0, 0}});
  PointCloud b = make_cloud({{1, 0, 0}});
  CHECK(chamfer_loss(a, a) == 0.0);
  CHECK(chamfer_loss(a, b) == doctest::Approx(2.0));
  PointCloud c = make_cloud({{0, 0, 0}, {2, 0, 0}});
  PointCloud d = make_cloud({{1, 0, 0}});
  CHECK(chamfer_loss(c, d) == doctest::Approx(3.0));
  CHECK_THROWS_AS(chamfer_loss(PointCloud{}, a), EmptyCloud);
}

TEST_CASE("metric_cd examples (averaged form)") {
  PointCloud a = make_cloud({{0, 0, 0}});
  PointCloud b = make_cloud({{1, 0, 0}});
  CHECK(metric_cd(a, a) == 0.0);
  CHECK(metric_cd(a, b) == doctest::Approx(2.0));
  PointCloud c = make_cloud({{0, 0, 0}, {2, 0, 0}});
  CHECK(metric_cd(c, b) == doctest::Approx(2.0));
}

TEST_CASE("chamfer symmetry and zero iff coincident sets") {
  Rng rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud a = random_cloud(rng, 20), b = random_cloud(rng, 13);
    CHECK(chamfer_loss(a, b) == doctest::Approx(chamfer_loss(b, a)));
    CHECK(metric_cd(a, b) == doctest::Approx(metric_cd(b, a)));
    CHECK(chamfer_loss(a, b) > 0.0);
  }
}

TEST_CASE("grid-accelerated nearest neighbors match brute force exactly") {
  Rng rng(73);
  for (int trial = 0; trial < 12; ++trial) {
    int n = 5 + static_cast<int>(rng.below(120));
    int m = 5 + static_cast<int>(rng.below(120));
    Mat from = random_mat(rng, n, 3), to = random_mat(rng, m, 3);
    auto brute = nearest_indices_brute(from, to);
    auto grid = nearest_indices_grid(from, to);
    for (int i = 0; i < n; ++i) CHECK(brute[i] == grid[i]);
  }
  // Accelerated chamfer equals brute-force chamfer bit for bit.
  PointCloud a = random_cloud(rng, 77), b = random_cloud(rng, 53);
  CHECK(chamfer_loss(a, b, true) == chamfer_loss(a, b, false));
}

TEST_CASE("metric_emd examples") {
  PointCloud a = make_cloud({{0, 0, 0}, {1, 0, 0}});
  PointCloud b = make_cloud({{0.5, 0, 0}, {1.5, 0, 0}});
  CHECK(metric_emd(a, a) == doctest::Approx(0.0));
  CHECK(metric_emd(a, b) == doctest::Approx(0.5));
  PointCloud c = make_cloud({{0, 0, 0}});
  CHECK_THROWS_AS(metric_emd(a, c), CardinalityError);
}

TEST_CASE("metric_emd matches factorial brute force for N=6") {
  Rng rng(79);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud a = random_cloud(rng, 6), b = random_cloud(rng, 6);
    double exact = metric_emd(a, b);
    double brute = brute_emd(a, b);
    CHECK(std::abs(exact - brute) < 1e-12);
  }
}

TEST_CASE("approximate EMD is an upper bound within tolerance") {
  Rng rng(83);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud a = random_cloud(rng, 64), b = random_cloud(rng, 64);
    EmdResult exact = metric_emd_full(a, b, EmdMode::Exact);
    EmdResult approx = metric_emd_full(a, b, EmdMode::Approximate);
    CHECK(!exact.approximate);
    CHECK(approx.approximate);
    CHECK(approx.value >= exact.value - 1e-12);
    CHECK(approx.value <= exact.value * 1.05);
  }
}

TEST_CASE("laplacian_loss examples") {
  PointCloud src = make_cloud({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  KnnGraph g = build_knn_graph(src, 2);
  CHECK(laplacian_loss(src, src, g) == 0.0);

  PointCloud shifted = src;
  shifted.points.rowwise() += Eigen::RowVector3d(0.3, -0.2, 0.9);
  CHECK(laplacian_loss(shifted, src, g) == doctest::Approx(0.0).epsilon(1e-12));

  double h = 0.2;
  PointCloud bumped = src;
  bumped.points(1, 2) += h;
  // deltas change by (0,0,-h/2), (0,0,h), (0,0,-h/2): loss = 1.5 h^2
  CHECK(laplacian_loss(bumped, src, g) == doctest::Approx(1.5 * h * h));

  PointCloud wrong = make_cloud({{0, 0, 0}});
  CHECK_THROWS_AS(laplacian_loss(wrong, src, g), CorrespondenceError);
}

TEST_CASE("kabsch_rotation examples") {
  SUBCASE("identical edges give identity") {
    Rng rng(89);
    Mat e = random_mat(rng, 5, 3);
    CHECK((kabsch_rotation(e, e) - Mat3::Identity()).cwiseAbs().maxCoeff() <
          1e-12);
  }
  SUBCASE("recovers a 90 degree rotation about z") {
    Mat3 rz;
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    Mat e(3, 3);
    e << 1, 0, 0, 0, 1, 0.5, 0.3, -0.2, 1;
    Mat d = e * rz.transpose();
    Mat3 r = kabsch_rotation(e, d);
    CHECK((r - rz).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("single parallel edge ties to identity") {
    Mat e(1, 3);
    e << 0.3, 0.4, 0.5;
    Mat3 r = kabsch_rotation(e, e);
    CHECK((r - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("degenerate zero edges give identity") {
    Mat z = Mat::Zero(4, 3);
    CHECK((kabsch_rotation(z, z) - Mat3::Identity()).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("arap_loss examples and rigid invariance") {
  Rng rng(97);
  PointCloud src = random_cloud(rng, 24, 0.5);
  KnnGraph g = build_knn_graph(src, 4);

  CHECK(arap_loss(src, src, g) == doctest::Approx(0.0).epsilon(1e-12));

  SUBCASE("global rigid motion is free") {
    for (int trial = 0; trial < 10; ++trial) {
      Mat3 r = random_rotation(rng);
      Eigen::RowVector3d t(rng.uniform(-1, 1), rng.uniform(-1, 1),
                           rng.uniform(-1, 1));
      PointCloud moved = src;
      moved.points = (src.points * r.transpose()).rowwise() + t;
      CHECK(arap_loss(moved, src, g) <= 1e-9);
    }
  }
  SUBCASE("uniform doubling pays squared edge lengths") {
    PointCloud doubled = src;
    doubled.points *= 2.0;
    double expect = 0.0;
    for (int i = 0; i < src.size(); ++i)
      for (int j : g.neighbors[i])
        expect += (src.points.row(i) - src.points.row(j)).squaredNorm();
    CHECK(arap_loss(doubled, src, g) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("reg_loss examples") {
  CHECK(reg_loss(Mat::Zero(5, 3)) == 0.0);
  Mat unit = Mat::Zero(4, 3);
  unit.col(1).setOnes();
  CHECK(reg_loss(unit) == doctest::Approx(1.0));
  Mat single(1, 3);
  single << 1, 2, 2;
  CHECK(reg_loss(single) == doctest::Approx(9.0));
}

TEST_CASE("render_silhouette basics") {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 100;
  intr.cx = intr.cy = 8;
  intr.width = intr.height = 16;
  PoseSE3 identity;

  SUBCASE("empty in frame renders zeros") {
    PointCloud c = make_cloud({{0, 0, -1}});
    SilhouetteMask m = render_silhouette(c, identity, intr, 1.5);
    CHECK(m.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("point at a pixel center saturates that pixel") {
    // Pixel (8, 8) center is at (8.5, 8.5).
    PointCloud c = make_cloud({{0.005, 0.005, 1.0}});
    SilhouetteMask m = render_silhouette(c, identity, intr, 1.5);
    CHECK(m.values(8, 8) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(m.values(8, 8) <= 1.0);
    // Gaussian falloff with pixel distance.
    double g1 = m.values(8, 9);
    double g2 = m.values(8, 10);
    CHECK(g1 > g2);
    CHECK(g1 == doctest::Approx(std::exp(-1.0 / (2 * 1.5 * 1.5))).epsilon(1e-6));
  }
  SUBCASE("two coincident points compose as 1-(1-g)^2") {
    PointCloud one = make_cloud({{0.011, -0.007, 1.0}});
    PointCloud two = make_cloud({{0.011, -0.007, 1.0}, {0.011, -0.007, 1.0}});
    SilhouetteMask m1 = render_silhouette(one, identity, intr, 1.5);
    SilhouetteMask m2 = render_silhouette(two, identity, intr, 1.5);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        double g = m1.values(r, c);
        CHECK(m2.values(r, c) ==
              doctest::Approx(1.0 - (1.0 - g) * (1.0 - g)).epsilon(1e-9));
      }
  }
  SUBCASE("values in [0,1] and monotone in point count") {
    Rng rng(101);
    PointCloud c = random_cloud(rng, 12, 0.05);
    c.points.col(2).array() += 1.0;
    SilhouetteMask before = render_silhouette(c, identity, intr, 1.5);
    PointCloud bigger;
    bigger.points.resize(13, 3);
    bigger.points.topRows(12) = c.points;
    bigger.points.row(12) << 0.01, 0.01, 1.0;
    SilhouetteMask after = render_silhouette(bigger, identity, intr, 1.5);
    CHECK(before.values.minCoeff() >= 0.0);
    CHECK(before.values.maxCoeff() <= 1.0);
    CHECK(((after.values - before.values).minCoeff()) >= -1e-15);
  }
}

TEST_CASE("silhouette_loss examples") {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 100;
  intr.cx = intr.cy = 8;
  intr.width = intr.height = 16;
  PoseSE3 identity;
  Rng rng(103);
  PointCloud c = random_cloud(rng, 9, 0.04);
  c.points.col(2).array() += 1.0;

  SUBCASE("self-render target gives zero") {
    SilhouetteTarget t{render_silhouette(c, identity, intr, 1.5), identity,
                       intr};
    CHECK(silhouette_loss(c, {t}, 1.5) == doctest::Approx(0.0));
  }
  SUBCASE("all-zero views match off-frame cloud") {
    PointCloud behind = make_cloud({{0, 0, -2}});
    SilhouetteMask zero;
    zero.values = Mat::Zero(16, 16);
    SilhouetteTarget t{zero, identity, intr};
    CHECK(silhouette_loss(behind, {t}, 1.5) == doctest::Approx(0.0));
  }
  SUBCASE("single-pixel unit difference costs 1/(H*W)") {
    PointCloud behind = make_cloud({{0, 0, -2}});
    SilhouetteMask one;
    one.values = Mat::Zero(16, 16);
    one.values(3, 4) = 1.0;
    SilhouetteTarget t{one, identity, intr};
    CHECK(silhouette_loss(behind, {t}, 1.5) ==
          doctest::Approx(1.0 / (16.0 * 16.0)));
  }
}

TEST_CASE("metric_siou examples") {
  SilhouetteMask a, b;
  a.values = Mat::Zero(2, 1);
  b.values = Mat::Zero(2, 1);
  a.values << 1, 1;
  b.values << 1, 0;
  CHECK(metric_siou(a, a) == doctest::Approx(1.0));
  CHECK(metric_siou(a, b) == doctest::Approx(0.5));

  SilhouetteMask empty1, empty2;
  empty1.values = Mat::Zero(4, 4);
  empty2.values = Mat::Zero(4, 4);
  CHECK(metric_siou(empty1, empty2) == 1.0);

  SilhouetteMask disjoint;
  disjoint.values = Mat::Zero(2, 1);
  disjoint.values << 0, 1;
  CHECK(metric_siou(a, disjoint) == doctest::Approx(0.5));
  SilhouetteMask other;
  other.values = Mat::Zero(2, 1);
  other.values << 0, 1;
  SilhouetteMask first;
  first.values = Mat::Zero(2, 1);
  first.values << 1, 0;
  CHECK(metric_siou(first, other) == 0.0);

  SilhouetteMask wrong;
  wrong.values = Mat::Zero(3, 1);
  CHECK_THROWS_AS(metric_siou(a, wrong), DimensionError);
}

TEST_CASE("total_loss composes the six weighted terms") {
  Rng rng(107);
  PointCloud src = random_cloud(rng, 12, 0.4);
  KnnGraph g = build_knn_graph(src, 3);
  CameraIntrinsics intr;
  intr.fx = intr.fy = 96;
  intr.cx = intr.cy = 8;
  intr.width = intr.height = 16;
  PoseSE3 cam;
  cam.translation = Vec3(0, 0, -2.0);

  LossWeights w;  // defaults: fm=lap=arap=reg=1, cd=100, sil=5

  SUBCASE("identity everything gives zero total") {
    TotalLossInputs in;
    in.pred = src;
    in.target = src;
    in.source = src;
    in.graph = g;
    in.field = Mat::Zero(12, 3);
    in.velocity_pred = Mat::Zero(12, 3);
    in.velocity_target = Mat::Zero(12, 3);
    in.sil_targets = {{render_silhouette(src, cam, intr, 1.5), cam, intr}};
    LossBreakdown b = total_loss(in, w);
    CHECK(b.total == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("only reg nonzero: unit shift field") {
    TotalLossInputs in;
    in.pred = src;
    in.target = src;
    in.source = src;
    in.graph = g;
    in.field = Mat::Zero(12, 3);
    in.field.col(0).setOnes();
    in.velocity_pred = Mat::Zero(12, 3);
    in.velocity_target = Mat::Zero(12, 3);
    in.sil_targets = {{render_silhouette(src, cam, intr, 1.5), cam, intr}};
    LossBreakdown b = total_loss(in, w);
    CHECK(b.reg == doctest::Approx(1.0));
    CHECK(b.total == doctest::Approx(w.reg * 1.0).epsilon(1e-12));
  }
  SUBCASE("random instance equals hand-weighted sum of separate terms") {
    PointCloud pred = random_cloud(rng, 12, 0.4);
    PointCloud target = random_cloud(rng, 12, 0.4);
    Mat field = random_mat(rng, 12, 3);
    Mat vp = random_mat(rng, 12, 3), vt = random_mat(rng, 12, 3);
    TotalLossInputs in;
    in.pred = pred;
    in.target = target;
    in.source = src;
    in.graph = g;
    in.field = field;
    in.velocity_pred = vp;
    in.velocity_target = vt;
    in.sil_targets = {{render_silhouette(target, cam, intr, 1.5), cam, intr}};
    LossBreakdown b = total_loss(in, w);
    double fm = (vp - vt).squaredNorm() / 12.0;
    double expect = w.fm * fm + w.cd * chamfer_loss(pred, target) +
                    w.lap * laplacian_loss(pred, src, g) +
                    w.arap * arap_loss(pred, src, g) + w.reg * reg_loss(field) +
                    w.sil * silhouette_loss(pred, in.sil_targets, 1.5);
    CHECK(b.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(w.fm * b.fm + w.cd * b.cd + w.lap * b.lap +
                                     w.arap * b.arap + w.reg * b.reg +
                                     w.sil * b.sil)
                         .epsilon(1e-9));
  }
}

TEST_CASE("differentiable loss ops match finite differences") {
  Rng rng(109);
  PointCloud src = random_cloud(rng, 6, 0.4);
  KnnGraph g = build_knn_graph(src, 2);
  Mat pred0 = src.points + 0.1 * random_mat(rng, 6, 3);
  PointCloud target = random_cloud(rng, 6, 0.4);
  CameraIntrinsics intr;
  intr.fx = intr.fy = 60;
  intr.cx = intr.cy = 4;
  intr.width = intr.height = 8;
  PoseSE3 cam;
  cam.translation = Vec3(0, 0, -2.0);
  SilhouetteMask gt_mask = render_silhouette(target, cam, intr, 1.5);
  std::vector<SilhouetteTarget> sil{{gt_mask, cam, intr}};

  auto check_op = [&](auto make_loss, double h, double tol) {
    Tape tape;
    Var pred = tape.leaf(pred0, true);
    Var loss = make_loss(tape, pred);
    tape.backward(loss);
    Mat analytic = tape.grad(pred);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 3; ++c) {
        auto eval = [&](double delta) {
          Mat shifted = pred0;
          shifted(r, c) += delta;
          Tape t2;
          Var p2 = t2.leaf(shifted, false);
          return t2.val(make_loss(t2, p2))(0, 0);
        };
        double fd = (eval(h) - eval(-h)) / (2 * h);
        double err = std::abs(analytic(r, c) - fd) /
                     std::max({std::abs(analytic(r, c)), std::abs(fd), 1.0});
        CHECK(err < tol);
      }
    }
  };

  check_op(
      [&](Tape& t, Var p) { return chamfer_sum_op(t, p, target.points); },
      1e-6, 1e-6);
  check_op([&](Tape& t, Var p) { return laplacian_op(t, p, src.points, g); },
           1e-6, 1e-6);
  // 1e-6 step keeps the rotation re-solve effect below tolerance; the
  // held-fixed rotation gradient is exact at the optimum.
  check_op([&](Tape& t, Var p) { return arap_op(t, p, src.points, g); }, 1e-6,
           1e-5);
  check_op(
      [&](Tape& t, Var p) {
        return silhouette_mse_op(
            t, p, sil, 1.5, std::numeric_limits<double>::infinity());
      },
      1e-6, 1e-5);
}

TEST_CASE("EMD dominates the directed mean nearest distance") {
  Rng rng(401);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud a = random_cloud(rng, 12), b = random_cloud(rng, 12);
    double emd = metric_emd(a, b);
    double directed = 0;
    for (int i = 0; i < 12; ++i) {
      double best = 1e300;
      for (int j = 0; j < 12; ++j)
        best = std::min(best, (a.points.row(i) - b.points.row(j)).norm());
      directed += best;
    }
    directed /= 12.0;
    CHECK(emd >= directed - 1e-12);
  }
}
