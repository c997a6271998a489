#pragma once

#include <vector>

#include "gdeform/flow.hpp"
#include "gdeform/losses.hpp"
#include "gdeform/params.hpp"
#include "gdeform/propagation.hpp"
#include "gdeform/view_aggregation.hpp"

namespace gdeform {

struct ModelConfig {
  int n = 256;
  int m = 128;
  int k_views = 4;
  int d_feat = 32;
  int d_geo = 64;
  int attn_width = 64;
  int attn_heads = 8;
  int refine_depth = 2;
  int vel_width = 64;
  int vel_blocks = 2;
  int mlp_ratio = 2;
  int pos_bands = 4;
  int time_dim = 16;
  int knn_k = 8;
  double tau = 0.2;
};

// Parameter-independent inputs for one template/target pair — everything
// the conditioning pipeline consumes that does not change during training.
struct PairInputs {
  Mat template_pts;  // N x 3 (x0)
  KnnGraph graph;
  Mat geo_input;
  std::vector<Mat> view_feats;            // per view, M_k x D
  std::vector<std::vector<int>> view_indices;
  std::vector<PoseSE3> rel_poses;         // relative to the primary view
  int primary = 0;
  std::vector<int> primary_indices;
  Mat target_patches;                     // P x D

  // Training-only extras
  Mat target_pts;  // x1 (index-aligned with template_pts)
  std::vector<SilhouetteTarget> sil_targets;
};

struct TrainHyper {
  LossWeights weights;
  double sigma_px = 1.5;
  double support_sigmas = 4.0;
};

// The full deformation network: geometric encoder, pose embedding, fusion /
// alignment / refinement attention stacks, and the velocity head, all backed
// by one flat named parameter vector.
class DeformationModel {
 public:
  explicit DeformationModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Safe-start initialization: Xavier-uniform weights, zero biases, unit
  // layer-norm gains, and zero output projections so every residual block
  // starts as the identity and the velocity head outputs the zero field.
  void init_params(uint64_t seed);

  // All blocks randomized (including output projections); used by the
  // gradient checker so every path carries gradient.
  void init_params_random(uint64_t seed);

  PairInputs prepare_inputs(const PointCloud& tmpl, const ViewSet& views,
                            const PatchFeatureMap& target) const;

  struct LiftedParams {
    std::vector<Var> vars;  // parallel to ParamStore entries
  };
  LiftedParams lift_params(Tape& tape, bool requires_grad) const;

  Var conditioning_op(Tape& tape, const PairInputs& pair,
                      const LiftedParams& p) const;
  Var velocity_op(Tape& tape, const Mat& positions, double t, Var cond,
                  const LiftedParams& p) const;

  ConditioningContext conditioning(const PairInputs& pair) const;
  std::pair<DeformationField, PointCloud> deform(const PairInputs& pair) const;

  // Builds the full training graph for a single pair at one sampled t and
  // (optionally) accumulates dTotal/dParams into grad_out.
  LossBreakdown pair_loss(const PairInputs& pair, double t_sample,
                          const TrainHyper& hyper,
                          std::vector<double>* grad_out) const;

  // Materialized velocity-network parameters (for the value-level flow API).
  VelocityNetParams velocity_params() const;

 private:
  struct AttnIds {
    int wq = -1, wk = -1, wv = -1, wo = -1;
  };
  struct BlockIds {
    int ln1_g = -1, ln1_b = -1;
    AttnIds attn;
    int ln2_g = -1, ln2_b = -1;
    int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
  };

  AttnIds add_attention(const std::string& prefix, int d_in, int d_out);
  BlockIds add_block(const std::string& prefix, int width);
  AttentionVars attention_vars(Tape& tape, const LiftedParams& p,
                               const AttnIds& ids) const;
  TransformerBlockVars block_vars(Tape& tape, const LiftedParams& p,
                                  const BlockIds& ids) const;

  ModelConfig cfg_;
  ParamStore store_;

  std::vector<int> geo_w_, geo_b_;
  int pose_w_ = -1, pose_b_ = -1;
  AttnIds fuse_, align_;
  std::vector<BlockIds> refine_;
  int vel_in_w_ = -1, vel_in_b_ = -1;
  std::vector<BlockIds> vel_blocks_;
  int vel_head_w_ = -1, vel_head_b_ = -1;
};

}  // namespace gdeform
