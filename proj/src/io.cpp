#include "gdeform/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

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

void write_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

float read_f32(std::istream& is, const std::string& what) {
  uint32_t u = read_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void check_magic(std::istream& is, const char* magic, const std::string& what) {
  char got[4];
  if (!is.read(got, 4)) throw FormatError("truncated " + what + " header");
  if (std::memcmp(got, magic, 4) != 0)
    throw FormatError("bad magic in " + what);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return is;
}

}  // namespace

void save_pcf(const std::string& path, const PointCloud& cloud) {
  std::ofstream os = open_out(path);
  os.write("PCF1", 4);
  write_u32(os, static_cast<uint32_t>(cloud.size()));
  for (int i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 3; ++c)
      write_f32(os, static_cast<float>(cloud.points(i, c)));
  if (!os) throw FormatError("write failed: " + path);
}

PointCloud load_pcf(const std::string& path) {
  std::ifstream is = open_in(path);
  check_magic(is, "PCF1", path);
  uint32_t n = read_u32(is, path);
  if (n == 0) throw FormatError("PCF1 with zero points: " + path);
  PointCloud cloud;
  cloud.points.resize(n, 3);
  for (uint32_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) cloud.points(i, c) = read_f32(is, path);
  return cloud;
}

void save_pose(const std::string& path, const PoseSE3& pose) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path);
  Eigen::Matrix4d m = pose.matrix();
  os.precision(17);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) os << m(r, c) << (c == 3 ? "" : " ");
    os << "\n";
  }
}

PoseSE3 load_pose(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open: " + path);
  double v[16];
  for (int i = 0; i < 16; ++i)
    if (!(is >> v[i])) throw FormatError("pose file needs 16 numbers: " + path);
  PoseSE3 pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = v[4 * r + c];
    pose.translation(r) = v[4 * r + 3];
  }
  if (!pose.is_valid())
    throw InvalidGeometry("pose file rotation is not a proper rotation: " + path);
  return pose;
}

void save_pgm(const std::string& path, const Mat& values) {
  std::ofstream os = open_out(path);
  os << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
  for (int r = 0; r < values.rows(); ++r) {
    for (int c = 0; c < values.cols(); ++c) {
      double v = std::min(1.0, std::max(0.0, values(r, c)));
      unsigned char b = static_cast<unsigned char>(std::lround(255.0 * v));
      os.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  if (!os) throw FormatError("write failed: " + path);
}

void save_mask(const std::string& path, const SilhouetteMask& mask) {
  std::ofstream os = open_out(path);
  os.write("MKF1", 4);
  write_u32(os, static_cast<uint32_t>(mask.height()));
  write_u32(os, static_cast<uint32_t>(mask.width()));
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      write_f32(os, static_cast<float>(mask.values(r, c)));
  if (!os) throw FormatError("write failed: " + path);
}

SilhouetteMask load_mask(const std::string& path) {
  std::ifstream is = open_in(path);
  check_magic(is, "MKF1", path);
  uint32_t h = read_u32(is, path);
  uint32_t w = read_u32(is, path);
  SilhouetteMask mask;
  mask.values.resize(h, w);
  for (uint32_t r = 0; r < h; ++r)
    for (uint32_t c = 0; c < w; ++c) mask.values(r, c) = read_f32(is, path);
  return mask;
}

}  // namespace gdeform
