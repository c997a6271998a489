#include "gdeform/view_aggregation.hpp"

namespace gdeform {

PoseEmbeddingVars lift(Tape& tape, const PoseEmbeddingParams& p, bool rg) {
  return PoseEmbeddingVars{tape.leaf(p.w, rg), tape.leaf(p.b, rg)};
}

int select_primary_view(const ViewSet& views, const PatchFeatureMap& target) {
  if (views.count() < 1) throw EmptyViewSet("select_primary_view: no views");
  int best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < views.count(); ++k) {
    double sim = image_similarity(views.views[static_cast<size_t>(k)].map, target);
    if (sim > best_sim) {
      best_sim = sim;
      best = k;
    }
  }
  return best;
}

Var embed_pose_op(Tape& tape, const PoseSE3& rel, const PoseEmbeddingVars& p) {
  Mat flat(12, 1);
  flat.col(0) = flatten_pose(rel);
  Var e = tape.matmul(p.w, tape.constant(flat));  // D x 1
  return tape.add(tape.transpose(e), p.b);        // 1 x D
}

Eigen::RowVectorXd embed_pose(const PoseSE3& rel,
                              const PoseEmbeddingParams& p) {
  Tape tape;
  Var out = embed_pose_op(tape, rel, lift(tape, p));
  return tape.val(out).row(0);
}

PointFeatureSet modulate(const PointFeatureSet& feats,
                         const Eigen::RowVectorXd& e) {
  if (feats.dim() != e.cols())
    throw DimensionError("modulate: embedding width != feature width");
  PointFeatureSet out = feats;
  out.features.rowwise() += e;
  return out;
}

Var aggregate_views_op(Tape& tape, const std::vector<Var>& view_feats,
                       const std::vector<PoseSE3>& rel_poses, int primary,
                       const AggregationVars& p) {
  if (view_feats.empty()) throw EmptyViewSet("aggregate_views: no views");
  if (rel_poses.size() != view_feats.size())
    throw DimensionError("aggregate_views: pose count != view count");
  std::vector<Var> modulated(view_feats.size());
  for (size_t k = 0; k < view_feats.size(); ++k) {
    Var e = embed_pose_op(tape, rel_poses[k], p.pose);
    modulated[k] = tape.add_rows(view_feats[k], e);
  }
  Var bank = modulated.size() == 1 ? modulated[0] : tape.concat_rows(modulated);
  Var primary_mod = modulated[static_cast<size_t>(primary)];
  Var fused = attention_op(tape, primary_mod, bank, p.fuse);
  return tape.add(fused, primary_mod);
}

PointFeatureSet cross_view_fuse(const PointFeatureSet& primary_mod,
                                const std::vector<PointFeatureSet>& all_mod,
                                const AttentionParams& p) {
  if (all_mod.empty()) throw EmptyViewSet("cross_view_fuse: empty bank");
  int total = 0;
  for (const auto& f : all_mod) {
    if (f.dim() != primary_mod.dim())
      throw DimensionError("cross_view_fuse: feature widths differ");
    total += f.count();
  }
  if (total < 1) throw EmptyViewSet("cross_view_fuse: empty bank");

  Mat bank(total, primary_mod.dim());
  int off = 0;
  for (const auto& f : all_mod) {
    bank.middleRows(off, f.count()) = f.features;
    off += f.count();
  }
  Tape tape;
  Var q = tape.constant(primary_mod.features);
  Var fused = attention_op(tape, q, tape.constant(bank), lift(tape, p));
  PointFeatureSet out;
  out.features = tape.val(fused) + primary_mod.features;
  out.point_indices = primary_mod.point_indices;
  return out;
}

std::pair<PointFeatureSet, int> aggregate_template(
    const PointCloud& cloud, const ViewSet& views,
    const PatchFeatureMap& target, const AggregationParams& params) {
  (void)cloud;
  if (views.count() < 1) throw EmptyViewSet("aggregate_template: no views");
  int primary = select_primary_view(views, target);
  const PoseSE3& primary_pose =
      views.views[static_cast<size_t>(primary)].map.pose;

  std::vector<PointFeatureSet> modulated;
  modulated.reserve(views.views.size());
  for (const auto& view : views.views) {
    PoseSE3 rel = relative_pose(primary_pose, view.map.pose);
    Eigen::RowVectorXd e = embed_pose(rel, params.pose);
    modulated.push_back(modulate(view.features, e));
  }
  PointFeatureSet fused = cross_view_fuse(
      modulated[static_cast<size_t>(primary)], modulated, params.fuse);
  return {std::move(fused), primary};
}

}  // namespace gdeform
