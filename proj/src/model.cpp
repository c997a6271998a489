#include "gdeform/model.hpp"

#include <cmath>

#include "gdeform/rng.hpp"

namespace gdeform {

DeformationModel::AttnIds DeformationModel::add_attention(
    const std::string& prefix, int d_in, int d_out) {
  AttnIds ids;
  ids.wq = store_.add_matrix(prefix + ".wq", d_in, cfg_.attn_width);
  ids.wk = store_.add_matrix(prefix + ".wk", d_in, cfg_.attn_width);
  ids.wv = store_.add_matrix(prefix + ".wv", d_in, cfg_.attn_width);
  ids.wo = store_.add_matrix(prefix + ".wo", cfg_.attn_width, d_out);
  return ids;
}

DeformationModel::BlockIds DeformationModel::add_block(
    const std::string& prefix, int width) {
  BlockIds ids;
  ids.ln1_g = store_.add_vector(prefix + ".ln1.gain", width);
  ids.ln1_b = store_.add_vector(prefix + ".ln1.bias", width);
  ids.attn = add_attention(prefix + ".attn", width, width);
  ids.ln2_g = store_.add_vector(prefix + ".ln2.gain", width);
  ids.ln2_b = store_.add_vector(prefix + ".ln2.bias", width);
  int hidden = cfg_.mlp_ratio * width;
  ids.mlp_w1 = store_.add_matrix(prefix + ".mlp.w1", width, hidden);
  ids.mlp_b1 = store_.add_vector(prefix + ".mlp.b1", hidden);
  ids.mlp_w2 = store_.add_matrix(prefix + ".mlp.w2", hidden, width);
  ids.mlp_b2 = store_.add_vector(prefix + ".mlp.b2", width);
  return ids;
}

DeformationModel::DeformationModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.attn_width % cfg_.attn_heads != 0)
    throw ConfigError("attention width must be divisible by head count");
  const int pos_dim = 3 + 6 * cfg_.pos_bands;
  const int geo_in = 3 * pos_dim;
  geo_w_.push_back(store_.add_matrix("geo.l0.w", geo_in, cfg_.d_geo));
  geo_b_.push_back(store_.add_vector("geo.l0.b", cfg_.d_geo));
  geo_w_.push_back(store_.add_matrix("geo.l1.w", cfg_.d_geo, cfg_.d_geo));
  geo_b_.push_back(store_.add_vector("geo.l1.b", cfg_.d_geo));
  geo_w_.push_back(store_.add_matrix("geo.l2.w", cfg_.d_geo, cfg_.d_geo));
  geo_b_.push_back(store_.add_vector("geo.l2.b", cfg_.d_geo));

  pose_w_ = store_.add_matrix("pose.w", cfg_.d_feat, 12);
  pose_b_ = store_.add_vector("pose.b", cfg_.d_feat);
  fuse_ = add_attention("fuse", cfg_.d_feat, cfg_.d_feat);
  align_ = add_attention("align", cfg_.d_feat, cfg_.d_feat);
  for (int i = 0; i < cfg_.refine_depth; ++i)
    refine_.push_back(add_block("refine" + std::to_string(i), cfg_.d_feat));

  const int vel_in = pos_dim + cfg_.d_feat + cfg_.time_dim;
  vel_in_w_ = store_.add_matrix("vel.in.w", vel_in, cfg_.vel_width);
  vel_in_b_ = store_.add_vector("vel.in.b", cfg_.vel_width);
  for (int i = 0; i < cfg_.vel_blocks; ++i)
    vel_blocks_.push_back(add_block("vel.block" + std::to_string(i),
                                    cfg_.vel_width));
  vel_head_w_ = store_.add_matrix("vel.head.w", cfg_.vel_width, 3);
  vel_head_b_ = store_.add_vector("vel.head.b", 3);
}

namespace {

bool is_output_projection(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    std::string s(suffix);
    return name.size() >= s.size() &&
           name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".wo") || ends_with(".mlp.w2") || ends_with("vel.head.w");
}

bool is_gain(const std::string& name) {
  return name.size() >= 5 && name.find(".gain") != std::string::npos;
}

bool is_weight_matrix(const ParamEntry& e) { return e.dims.size() == 2; }

void fill_xavier(Mat& m, Rng& rng) {
  double limit = std::sqrt(6.0 / (m.rows() + m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-limit, limit);
}

}  // namespace

void DeformationModel::init_params(uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xA11CE5EDULL));
  for (int i = 0; i < store_.count(); ++i) {
    const ParamEntry& e = store_.entry(i);
    Mat m = store_.get(i);
    if (is_weight_matrix(e) && !is_output_projection(e.name)) {
      fill_xavier(m, rng);
    } else if (is_gain(e.name)) {
      m.setOnes();
    } else {
      m.setZero();
    }
    store_.set(i, m);
  }
}

void DeformationModel::init_params_random(uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xF00DF00DULL));
  for (int i = 0; i < store_.count(); ++i) {
    const ParamEntry& e = store_.entry(i);
    Mat m = store_.get(i);
    if (is_weight_matrix(e)) {
      fill_xavier(m, rng);
    } else if (is_gain(e.name)) {
      for (int c = 0; c < m.cols(); ++c) m(0, c) = 1.0 + 0.2 * rng.uniform(-1, 1);
    } else {
      for (int c = 0; c < m.cols(); ++c) m(0, c) = 0.1 * rng.uniform(-1, 1);
    }
    store_.set(i, m);
  }
}

PairInputs DeformationModel::prepare_inputs(const PointCloud& tmpl,
                                            const ViewSet& views,
                                            const PatchFeatureMap& target) const {
  if (views.count() < 1) throw EmptyViewSet("prepare_inputs: no views");
  PairInputs in;
  in.template_pts = tmpl.points;
  in.graph = build_knn_graph(tmpl, cfg_.knn_k);
  in.geo_input = geo_encoder_input(tmpl, in.graph, cfg_.pos_bands);
  in.primary = select_primary_view(views, target);
  const PoseSE3& primary_pose =
      views.views[static_cast<size_t>(in.primary)].map.pose;
  for (const auto& view : views.views) {
    if (view.features.dim() != cfg_.d_feat)
      throw DimensionError("prepare_inputs: view feature width != D");
    in.view_feats.push_back(view.features.features);
    in.view_indices.push_back(view.features.point_indices);
    in.rel_poses.push_back(relative_pose(primary_pose, view.map.pose));
  }
  in.primary_indices = in.view_indices[static_cast<size_t>(in.primary)];
  if (in.primary_indices.empty())
    throw EmptyVisibleSet("prepare_inputs: primary view sees no points");
  in.target_patches = target.grid;
  return in;
}

DeformationModel::LiftedParams DeformationModel::lift_params(
    Tape& tape, bool requires_grad) const {
  LiftedParams p;
  p.vars.reserve(static_cast<size_t>(store_.count()));
  for (int i = 0; i < store_.count(); ++i)
    p.vars.push_back(tape.leaf(store_.get(i), requires_grad));
  return p;
}

AttentionVars DeformationModel::attention_vars(Tape&, const LiftedParams& p,
                                               const AttnIds& ids) const {
  AttentionVars v;
  v.wq = p.vars[static_cast<size_t>(ids.wq)];
  v.wk = p.vars[static_cast<size_t>(ids.wk)];
  v.wv = p.vars[static_cast<size_t>(ids.wv)];
  v.wo = p.vars[static_cast<size_t>(ids.wo)];
  v.heads = cfg_.attn_heads;
  return v;
}

TransformerBlockVars DeformationModel::block_vars(Tape& tape,
                                                  const LiftedParams& p,
                                                  const BlockIds& ids) const {
  TransformerBlockVars v;
  v.ln1_gain = p.vars[static_cast<size_t>(ids.ln1_g)];
  v.ln1_bias = p.vars[static_cast<size_t>(ids.ln1_b)];
  v.attn = attention_vars(tape, p, ids.attn);
  v.ln2_gain = p.vars[static_cast<size_t>(ids.ln2_g)];
  v.ln2_bias = p.vars[static_cast<size_t>(ids.ln2_b)];
  v.mlp_w1 = p.vars[static_cast<size_t>(ids.mlp_w1)];
  v.mlp_b1 = p.vars[static_cast<size_t>(ids.mlp_b1)];
  v.mlp_w2 = p.vars[static_cast<size_t>(ids.mlp_w2)];
  v.mlp_b2 = p.vars[static_cast<size_t>(ids.mlp_b2)];
  return v;
}

Var DeformationModel::conditioning_op(Tape& tape, const PairInputs& pair,
                                      const LiftedParams& p) const {
  // View-adaptive aggregation over the visible-point features.
  std::vector<Var> view_feats;
  view_feats.reserve(pair.view_feats.size());
  for (const Mat& f : pair.view_feats) view_feats.push_back(tape.constant(f));
  AggregationVars agg;
  agg.pose = PoseEmbeddingVars{p.vars[static_cast<size_t>(pose_w_)],
                               p.vars[static_cast<size_t>(pose_b_)]};
  agg.fuse = attention_vars(tape, p, fuse_);
  Var fused = aggregate_views_op(tape, view_feats, pair.rel_poses,
                                 pair.primary, agg);

  // Geometry-guided propagation from the primary view's visible points.
  GeoEncoderVars geo;
  for (size_t l = 0; l < geo_w_.size(); ++l) {
    geo.weights.push_back(p.vars[static_cast<size_t>(geo_w_[l])]);
    geo.biases.push_back(p.vars[static_cast<size_t>(geo_b_[l])]);
  }
  Var emb = encode_geometry_op(tape, tape.constant(pair.geo_input), geo);
  Var aff = affinity_op(tape, emb, pair.primary_indices);
  Var complete = propagate_op(tape, aff, fused, cfg_.tau);

  // Semantic alignment against the target patches, then self-refinement.
  Var aligned = align_to_target_op(tape, complete,
                                   tape.constant(pair.target_patches),
                                   attention_vars(tape, p, align_));
  for (const auto& block : refine_)
    aligned = transformer_block_op(tape, aligned, block_vars(tape, p, block));
  return aligned;
}

Var DeformationModel::velocity_op(Tape& tape, const Mat& positions, double t,
                                  Var cond, const LiftedParams& p) const {
  VelocityNetVars v;
  v.in_w = p.vars[static_cast<size_t>(vel_in_w_)];
  v.in_b = p.vars[static_cast<size_t>(vel_in_b_)];
  for (const auto& block : vel_blocks_)
    v.blocks.push_back(block_vars(tape, p, block));
  v.head_w = p.vars[static_cast<size_t>(vel_head_w_)];
  v.head_b = p.vars[static_cast<size_t>(vel_head_b_)];
  v.pos_bands = cfg_.pos_bands;
  v.time_dim = cfg_.time_dim;
  return velocity_forward_op(tape, positions, t, cond, v);
}

ConditioningContext DeformationModel::conditioning(const PairInputs& pair) const {
  Tape tape;
  LiftedParams p = lift_params(tape, false);
  Var c = conditioning_op(tape, pair, p);
  return ConditioningContext{tape.val(c)};
}

std::pair<DeformationField, PointCloud> DeformationModel::deform(
    const PairInputs& pair) const {
  Tape tape;
  LiftedParams p = lift_params(tape, false);
  Var c = conditioning_op(tape, pair, p);
  Var d0 = velocity_op(tape, pair.template_pts, 0.0, c, p);
  DeformationField field{tape.val(d0)};
  PointCloud deformed;
  deformed.points = pair.template_pts + 1.0 * field.vectors;
  return {std::move(field), std::move(deformed)};
}

LossBreakdown DeformationModel::pair_loss(const PairInputs& pair,
                                          double t_sample,
                                          const TrainHyper& hyper,
                                          std::vector<double>* grad_out) const {
  const int n = static_cast<int>(pair.template_pts.rows());
  if (pair.target_pts.rows() != n)
    throw CorrespondenceError("pair_loss: target not index-aligned");
  Tape tape;
  LiftedParams p = lift_params(tape, grad_out != nullptr);
  Var c = conditioning_op(tape, pair, p);

  Mat xt = (1.0 - t_sample) * pair.template_pts + t_sample * pair.target_pts;
  Mat u = pair.target_pts - pair.template_pts;
  Var v_t = velocity_op(tape, xt, t_sample, c, p);
  Var fm = tape.scale(tape.sum_sq(tape.sub(v_t, tape.constant(u))), 1.0 / n);

  Var d0 = velocity_op(tape, pair.template_pts, 0.0, c, p);
  Var pred = tape.add(tape.constant(pair.template_pts), d0);
  Var cd = chamfer_sum_op(tape, pred, pair.target_pts);
  Var lap = laplacian_op(tape, pred, pair.template_pts, pair.graph);
  Var arap = arap_op(tape, pred, pair.template_pts, pair.graph);
  Var reg = tape.scale(tape.sum_sq(d0), 1.0 / n);
  Var sil = silhouette_mse_op(tape, pred, pair.sil_targets, hyper.sigma_px,
                              hyper.support_sigmas);

  const LossWeights& w = hyper.weights;
  Var total = tape.scale(fm, w.fm);
  total = tape.add(total, tape.scale(cd, w.cd));
  total = tape.add(total, tape.scale(lap, w.lap));
  total = tape.add(total, tape.scale(arap, w.arap));
  total = tape.add(total, tape.scale(reg, w.reg));
  total = tape.add(total, tape.scale(sil, w.sil));

  LossBreakdown out;
  out.fm = tape.val(fm)(0, 0);
  out.cd = tape.val(cd)(0, 0);
  out.lap = tape.val(lap)(0, 0);
  out.arap = tape.val(arap)(0, 0);
  out.reg = tape.val(reg)(0, 0);
  out.sil = tape.val(sil)(0, 0);
  out.total = tape.val(total)(0, 0);

  if (grad_out) {
    tape.backward(total);
    grad_out->assign(store_.total(), 0.0);
    for (int i = 0; i < store_.count(); ++i)
      store_.scatter(i, tape.grad(p.vars[static_cast<size_t>(i)]), *grad_out);
  }
  return out;
}

VelocityNetParams DeformationModel::velocity_params() const {
  VelocityNetParams v;
  v.in_w = store_.get(vel_in_w_);
  v.in_b = store_.get(vel_in_b_);
  for (const auto& ids : vel_blocks_) {
    TransformerBlockParams b;
    b.ln1_gain = store_.get(ids.ln1_g);
    b.ln1_bias = store_.get(ids.ln1_b);
    b.attn = AttentionParams{store_.get(ids.attn.wq), store_.get(ids.attn.wk),
                             store_.get(ids.attn.wv), store_.get(ids.attn.wo),
                             cfg_.attn_heads};
    b.ln2_gain = store_.get(ids.ln2_g);
    b.ln2_bias = store_.get(ids.ln2_b);
    b.mlp_w1 = store_.get(ids.mlp_w1);
    b.mlp_b1 = store_.get(ids.mlp_b1);
    b.mlp_w2 = store_.get(ids.mlp_w2);
    b.mlp_b2 = store_.get(ids.mlp_b2);
    v.blocks.push_back(std::move(b));
  }
  v.head_w = store_.get(vel_head_w_);
  v.head_b = store_.get(vel_head_b_);
  v.pos_bands = cfg_.pos_bands;
  v.time_dim = cfg_.time_dim;
  return v;
}

}  // namespace gdeform
