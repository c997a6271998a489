#pragma once

#include "gdeform/geometry.hpp"

namespace gdeform {

// [x y z | sin(2^m pi c), cos(2^m pi c) for m < bands, c in {x,y,z}],
// giving 3 + 6 * bands columns.
Mat sincos_positional(const Mat& pts, int bands);

// Sinusoidal embedding of t in [0,1] at geometric frequencies; dim even.
Eigen::RowVectorXd time_embedding(double t, int dim);

// Constant encoder input: positional encoding of centered coordinates
// concatenated with mean- and max-pooled edge-vector encodings over the
// k-NN neighborhood. Depends only on geometry, never on parameters.
Mat geo_encoder_input(const PointCloud& cloud, const KnnGraph& graph,
                      int bands);

}  // namespace gdeform
