#pragma once

#include <utility>
#include <vector>

#include "gdeform/alignment.hpp"
#include "gdeform/features.hpp"

namespace gdeform {

// One template view: its patch grid plus the features sampled at the
// template points visible from that view.
struct ViewEntry {
  PatchFeatureMap map;
  PointFeatureSet features;
};

struct ViewSet {
  std::vector<ViewEntry> views;

  int count() const { return static_cast<int>(views.size()); }
};

struct PoseEmbeddingParams {
  Mat w;  // D x 12
  Mat b;  // 1 x D
};

struct PoseEmbeddingVars {
  Var w, b;
};

PoseEmbeddingVars lift(Tape& tape, const PoseEmbeddingParams& p,
                       bool requires_grad = false);

// argmax_k image_similarity(view_k, target); ties to the lowest index.
int select_primary_view(const ViewSet& views, const PatchFeatureMap& target);

// e = W_pose * flatten_pose(rel) + b_pose, returned as a 1 x D row.
Eigen::RowVectorXd embed_pose(const PoseSE3& rel, const PoseEmbeddingParams& p);
Var embed_pose_op(Tape& tape, const PoseSE3& rel, const PoseEmbeddingVars& p);

// Adds the pose embedding to every feature row; indices are untouched.
PointFeatureSet modulate(const PointFeatureSet& feats,
                         const Eigen::RowVectorXd& e);

// Attention(Q = primary, K = V = stacked bank of all views) + primary.
// The output keeps the primary view's point indices.
PointFeatureSet cross_view_fuse(const PointFeatureSet& primary_mod,
                                const std::vector<PointFeatureSet>& all_mod,
                                const AttentionParams& p);

struct AggregationParams {
  PoseEmbeddingParams pose;
  AttentionParams fuse;
};

// Full view-adaptive aggregation: primary selection, relative pose
// embeddings, per-view modulation, and cross-view fusion.
std::pair<PointFeatureSet, int> aggregate_template(
    const PointCloud& cloud, const ViewSet& views,
    const PatchFeatureMap& target, const AggregationParams& params);

// Tape-level fusion used by the trainer (primary selection and relative
// poses are parameter-independent and precomputed by the caller).
struct AggregationVars {
  PoseEmbeddingVars pose;
  AttentionVars fuse;
};

Var aggregate_views_op(Tape& tape, const std::vector<Var>& view_feats,
                       const std::vector<PoseSE3>& rel_poses, int primary,
                       const AggregationVars& p);

}  // namespace gdeform
