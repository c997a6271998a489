#include "gdeform/propagation.hpp"

namespace gdeform {

GeoEncoderVars lift(Tape& tape, const GeoEncoderParams& p, bool rg) {
  GeoEncoderVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.leaf(w, rg));
  for (const auto& b : p.biases) v.biases.push_back(tape.leaf(b, rg));
  return v;
}

Var encode_geometry_op(Tape& tape, Var geo_input, const GeoEncoderVars& p) {
  if (p.weights.size() != p.biases.size() || p.weights.empty())
    throw DimensionError("encode_geometry: malformed encoder params");
  Var x = geo_input;
  for (size_t l = 0; l < p.weights.size(); ++l) {
    if (tape.cols(x) != tape.rows(p.weights[l]))
      throw DimensionError("encode_geometry: layer width mismatch");
    x = tape.add_rows(tape.matmul(x, p.weights[l]), p.biases[l]);
    if (l + 1 < p.weights.size()) x = tape.gelu(x);
  }
  return x;
}

GeometricEmbedding encode_geometry(const PointCloud& cloud,
                                   const KnnGraph& graph,
                                   const GeoEncoderParams& params,
                                   int pos_bands) {
  Mat input = geo_encoder_input(cloud, graph, pos_bands);
  Tape tape;
  Var out = encode_geometry_op(tape, tape.constant(input), lift(tape, params));
  return GeometricEmbedding{tape.val(out)};
}

AffinityMatrix affinity(const GeometricEmbedding& emb,
                        const std::vector<int>& visible_indices) {
  Tape tape;
  Var out = affinity_op(tape, tape.constant(emb.vectors), visible_indices);
  return AffinityMatrix{tape.val(out)};
}

Var affinity_op(Tape& tape, Var emb, const std::vector<int>& visible_indices) {
  if (visible_indices.empty())
    throw EmptyVisibleSet("affinity: no visible points");
  for (int i : visible_indices)
    if (i < 0 || i >= tape.rows(emb))
      throw DimensionError("affinity: visible index out of range");
  Var normed = tape.l2_normalize_rows(emb);
  Var vis = tape.gather_rows(normed, visible_indices);
  return tape.matmul_nt(normed, vis);
}

Var propagate_op(Tape& tape, Var aff, Var visible_feats, double temperature) {
  if (!(temperature > 0.0))
    throw InvalidTemperature("propagate_features: temperature must be > 0");
  if (tape.cols(aff) != tape.rows(visible_feats))
    throw DimensionError("propagate_features: affinity columns != visible rows");
  Var weights = tape.softmax_rows(tape.scale(aff, 1.0 / temperature));
  return tape.matmul(weights, visible_feats);
}

Mat propagate_features(const AffinityMatrix& aff,
                       const PointFeatureSet& visible_feats,
                       double temperature) {
  Tape tape;
  Var out = propagate_op(tape, tape.constant(aff.values),
                         tape.constant(visible_feats.features), temperature);
  return tape.val(out);
}

}  // namespace gdeform
