#include "gdeform/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "gdeform/rng.hpp"

namespace gdeform {
namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated " + what);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

PatchFeatureMap load_feature_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("truncated FMF1 header: " + path);
  if (std::memcmp(magic, "FMF1", 4) != 0)
    throw FormatError("bad magic in feature file: " + path);

  PatchFeatureMap map;
  map.hp = static_cast<int>(read_u32(is, path));
  map.wp = static_cast<int>(read_u32(is, path));
  int d = static_cast<int>(read_u32(is, path));
  map.patch_size = static_cast<int>(read_u32(is, path));
  if (map.hp <= 0 || map.wp <= 0 || d <= 0 || map.patch_size <= 0)
    throw FormatError("bad dimensions in feature file: " + path);

  double m[16];
  for (int i = 0; i < 16; ++i) m[i] = read_f64(is, path);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) map.pose.rotation(r, c) = m[4 * r + c];
    map.pose.translation(r) = m[4 * r + 3];
  }
  map.intr.fx = read_f64(is, path);
  map.intr.fy = read_f64(is, path);
  map.intr.cx = read_f64(is, path);
  map.intr.cy = read_f64(is, path);
  map.intr.height = static_cast<int>(read_u32(is, path));
  map.intr.width = static_cast<int>(read_u32(is, path));
  if (map.hp * map.patch_size > map.intr.height ||
      map.wp * map.patch_size > map.intr.width)
    throw FormatError("patch grid exceeds image size: " + path);

  map.grid.resize(map.hp * map.wp, d);
  std::vector<char> buf(static_cast<size_t>(map.hp) * map.wp * d * 4);
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size())))
    throw FormatError("truncated feature payload: " + path);
  size_t o = 0;
  for (int p = 0; p < map.hp * map.wp; ++p) {
    for (int c = 0; c < d; ++c) {
      uint32_t u = static_cast<unsigned char>(buf[o]) |
                   (static_cast<uint32_t>(static_cast<unsigned char>(buf[o + 1])) << 8) |
                   (static_cast<uint32_t>(static_cast<unsigned char>(buf[o + 2])) << 16) |
                   (static_cast<uint32_t>(static_cast<unsigned char>(buf[o + 3])) << 24);
      float f;
      std::memcpy(&f, &u, 4);
      map.grid(p, c) = f;
      o += 4;
    }
  }
  if (!map.grid.allFinite())
    throw FormatError("non-finite feature values: " + path);
  return map;
}

void save_feature_map(const std::string& path, const PatchFeatureMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  os.write("FMF1", 4);
  write_u32(os, static_cast<uint32_t>(map.hp));
  write_u32(os, static_cast<uint32_t>(map.wp));
  write_u32(os, static_cast<uint32_t>(map.dim()));
  write_u32(os, static_cast<uint32_t>(map.patch_size));
  Eigen::Matrix4d m = map.pose.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) write_f64(os, m(r, c));
  write_f64(os, map.intr.fx);
  write_f64(os, map.intr.fy);
  write_f64(os, map.intr.cx);
  write_f64(os, map.intr.cy);
  write_u32(os, static_cast<uint32_t>(map.intr.height));
  write_u32(os, static_cast<uint32_t>(map.intr.width));
  for (int p = 0; p < map.patches(); ++p) {
    for (int c = 0; c < map.dim(); ++c) {
      float f = static_cast<float>(map.grid(p, c));
      uint32_t u;
      std::memcpy(&u, &f, 4);
      write_u32(os, u);
    }
  }
  if (!os) throw FormatError("write failed: " + path);
}

namespace {

std::vector<double> encoding_phases(int d, uint64_t seed) {
  std::vector<double> phases(d);
  for (int j = 0; j < d; ++j)
    phases[j] =
        2.0 * M_PI * Rng(Rng::mix(seed, static_cast<uint64_t>(j))).uniform();
  return phases;
}

Eigen::RowVectorXd encode_with_phases(const Vec3& world,
                                      const std::vector<double>& phases) {
  int d = static_cast<int>(phases.size());
  Eigen::RowVectorXd enc(d);
  for (int j = 0; j < d; ++j) {
    // Frequencies cycle pi..8*pi; higher bands would rotate the encoding so
    // fast that nearby surfaces stop looking similar in feature space.
    int band = (j / 6) % 3;
    int r = j % 6;
    int axis = r / 2;
    double omega = M_PI * std::pow(2.0, band);
    double arg = omega * world(axis) + phases[j] + (r % 2) * 0.5 * M_PI;
    enc(j) = std::sin(arg);
  }
  return enc;
}

}  // namespace

Eigen::RowVectorXd synthetic_point_encoding(const Vec3& world, int d,
                                            uint64_t seed) {
  return encode_with_phases(world, encoding_phases(d, seed));
}

PatchFeatureMap synthetic_feature_map(const PointCloud& cloud,
                                      const PoseSE3& pose,
                                      const CameraIntrinsics& intr, int d,
                                      uint64_t seed, int patch_size) {
  if (d < 8) throw DimensionError("synthetic_feature_map: D must be >= 8");
  PatchFeatureMap map;
  map.patch_size =
      patch_size > 0 ? patch_size : std::max(1, intr.width > 0 ? intr.width / 16 : 1);
  map.hp = intr.height / map.patch_size;
  map.wp = intr.width / map.patch_size;
  map.pose = pose;
  map.intr = intr;
  map.grid = Mat::Zero(map.hp * map.wp, d);
  std::vector<double> phases = encoding_phases(d, seed);

  VisibilityMask vis = compute_visibility(cloud, pose, intr);
  // Nearest-to-center visible point per patch, ties to lower index.
  std::vector<int> best(map.hp * map.wp, -1);
  std::vector<double> best_d2(map.hp * map.wp,
                              std::numeric_limits<double>::infinity());
  for (int i = 0; i < cloud.size(); ++i) {
    if (!vis[i]) continue;
    Projection pr = project_point(cloud.points.row(i).transpose(), pose, intr);
    int pc = static_cast<int>(std::floor(pr.u / map.patch_size));
    int prow = static_cast<int>(std::floor(pr.v / map.patch_size));
    if (pc < 0 || pc >= map.wp || prow < 0 || prow >= map.hp) continue;
    double cx = (pc + 0.5) * map.patch_size;
    double cy = (prow + 0.5) * map.patch_size;
    double d2 = (pr.u - cx) * (pr.u - cx) + (pr.v - cy) * (pr.v - cy);
    int p = prow * map.wp + pc;
    if (d2 < best_d2[p]) {
      best_d2[p] = d2;
      best[p] = i;
    }
  }
  for (int p = 0; p < map.patches(); ++p) {
    if (best[p] < 0) continue;
    map.grid.row(p) =
        encode_with_phases(cloud.points.row(best[p]).transpose(), phases);
  }
  return map;
}

PointFeatureSet sample_features_at(const PatchFeatureMap& map,
                                   const PointCloud& cloud,
                                   const VisibilityMask& visibility) {
  if (static_cast<int>(visibility.size()) != cloud.size())
    throw DimensionError("sample_features_at: visibility length != N");
  PointFeatureSet out;
  std::vector<Eigen::RowVectorXd> rows;
  for (int i = 0; i < cloud.size(); ++i) {
    if (!visibility[i]) continue;
    Projection pr =
        project_point(cloud.points.row(i).transpose(), map.pose, map.intr);
    if (pr.depth <= 0 || pr.u < 0 || pr.u >= map.intr.width || pr.v < 0 ||
        pr.v >= map.intr.height) {
      ++out.skipped_out_of_frame;
      continue;
    }
    // Continuous patch coordinates; patch centers sit at integer coords.
    double pu = pr.u / map.patch_size - 0.5;
    double pv = pr.v / map.patch_size - 0.5;
    int c0 = static_cast<int>(std::floor(pu));
    int r0 = static_cast<int>(std::floor(pv));
    double fu = pu - c0;
    double fv = pv - r0;
    auto clamp_c = [&](int c) { return std::min(map.wp - 1, std::max(0, c)); };
    auto clamp_r = [&](int r) { return std::min(map.hp - 1, std::max(0, r)); };
    Eigen::RowVectorXd f =
        (1 - fu) * (1 - fv) * map.patch(clamp_r(r0), clamp_c(c0)) +
        fu * (1 - fv) * map.patch(clamp_r(r0), clamp_c(c0 + 1)) +
        (1 - fu) * fv * map.patch(clamp_r(r0 + 1), clamp_c(c0)) +
        fu * fv * map.patch(clamp_r(r0 + 1), clamp_c(c0 + 1));
    rows.push_back(f);
    out.point_indices.push_back(i);
  }
  out.features.resize(static_cast<int>(rows.size()), map.dim());
  for (int i = 0; i < static_cast<int>(rows.size()); ++i)
    out.features.row(i) = rows[i];
  return out;
}

double image_similarity(const PatchFeatureMap& a, const PatchFeatureMap& b) {
  if (a.dim() != b.dim())
    throw DimensionError("image_similarity: feature dims differ");
  auto pooled = [](const PatchFeatureMap& m) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(m.dim());
    int nonempty = 0;
    for (int p = 0; p < m.patches(); ++p) {
      if (m.grid.row(p).cwiseAbs().maxCoeff() > 0.0) {
        sum += m.grid.row(p);
        ++nonempty;
      }
    }
    if (nonempty > 0) sum /= nonempty;
    return sum;
  };
  Eigen::RowVectorXd va = pooled(a);
  Eigen::RowVectorXd vb = pooled(b);
  double na = va.norm(), nb = vb.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return va.dot(vb) / (na * nb);
}

}  // namespace gdeform
