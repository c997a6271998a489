#pragma once

#include <vector>

#include "gdeform/encoding.hpp"
#include "gdeform/features.hpp"
#include "gdeform/tape.hpp"

namespace gdeform {

struct GeometricEmbedding {
  Mat vectors;  // N x d
};

struct AffinityMatrix {
  Mat values;  // N x M cosine similarities in [-1, 1]
};

// Three dense layers with GELU between them, applied per point to the
// constant neighborhood encoding from geo_encoder_input.
struct GeoEncoderParams {
  std::vector<Mat> weights;  // [in x d], [d x d], [d x d]
  std::vector<Mat> biases;   // 1 x d each
};

struct GeoEncoderVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

GeoEncoderVars lift(Tape& tape, const GeoEncoderParams& p,
                    bool requires_grad = false);

Var encode_geometry_op(Tape& tape, Var geo_input, const GeoEncoderVars& p);

GeometricEmbedding encode_geometry(const PointCloud& cloud,
                                   const KnnGraph& graph,
                                   const GeoEncoderParams& params,
                                   int pos_bands = 4);

// values[j][i] = cos(g_j, g_visible_i); zero-norm rows give 0.
AffinityMatrix affinity(const GeometricEmbedding& emb,
                        const std::vector<int>& visible_indices);
Var affinity_op(Tape& tape, Var emb, const std::vector<int>& visible_indices);

// Row j = sum_i softmax_i(S_ji / tau) * f_i. Rows are convex combinations
// of the visible features.
Mat propagate_features(const AffinityMatrix& aff,
                       const PointFeatureSet& visible_feats, double temperature);
Var propagate_op(Tape& tape, Var aff, Var visible_feats, double temperature);

}  // namespace gdeform
