#include "gdeform/encoding.hpp"

#include <cmath>

namespace gdeform {

Mat sincos_positional(const Mat& pts, int bands) {
  const int n = static_cast<int>(pts.rows());
  Mat out(n, 3 + 6 * bands);
  out.leftCols(3) = pts;
  for (int m = 0; m < bands; ++m) {
    double omega = M_PI * std::pow(2.0, m);
    for (int c = 0; c < 3; ++c) {
      int col = 3 + 6 * m + 2 * c;
      for (int i = 0; i < n; ++i) {
        out(i, col) = std::sin(omega * pts(i, c));
        out(i, col + 1) = std::cos(omega * pts(i, c));
      }
    }
  }
  return out;
}

Eigen::RowVectorXd time_embedding(double t, int dim) {
  if (dim % 2 != 0) throw DimensionError("time_embedding: dim must be even");
  Eigen::RowVectorXd e(dim);
  int half = dim / 2;
  for (int m = 0; m < half; ++m) {
    double omega = M_PI * std::pow(2.0, m);
    e(2 * m) = std::sin(omega * t);
    e(2 * m + 1) = std::cos(omega * t);
  }
  return e;
}

Mat geo_encoder_input(const PointCloud& cloud, const KnnGraph& graph,
                      int bands) {
  const int n = cloud.size();
  if (static_cast<int>(graph.neighbors.size()) != n)
    throw CorrespondenceError("geo_encoder_input: graph built on different cloud");
  Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  Mat centered = cloud.points.rowwise() - centroid;
  Mat pos = sincos_positional(centered, bands);
  const int f = static_cast<int>(pos.cols());

  Mat out(n, 3 * f);
  out.leftCols(f) = pos;
  for (int i = 0; i < n; ++i) {
    const auto& nb = graph.neighbors[i];
    Mat edges(static_cast<int>(nb.size()), 3);
    for (size_t q = 0; q < nb.size(); ++q)
      edges.row(static_cast<int>(q)) =
          cloud.points.row(nb[q]) - cloud.points.row(i);
    Mat enc = sincos_positional(edges, bands);
    out.block(i, f, 1, f) = enc.colwise().mean();
    out.block(i, 2 * f, 1, f) = enc.colwise().maxCoeff();
  }
  return out;
}

}  // namespace gdeform
