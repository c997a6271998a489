#include "gdeform/alignment.hpp"

#include <cmath>

namespace gdeform {

Var attention_op(Tape& tape, Var q_in, Var kv_in, const AttentionVars& p) {
  if (tape.rows(kv_in) < 1) throw DimensionError("attention: empty key/value set");
  if (tape.cols(q_in) != tape.rows(p.wq) || tape.cols(kv_in) != tape.rows(p.wk))
    throw DimensionError("attention: input width does not match projections");
  Var q = tape.matmul(q_in, p.wq);
  Var k = tape.matmul(kv_in, p.wk);
  Var v = tape.matmul(kv_in, p.wv);
  Var fused = tape.multihead_attention(q, k, v, p.heads);
  return tape.matmul(fused, p.wo);
}

Var transformer_block_op(Tape& tape, Var x, const TransformerBlockVars& p) {
  Var h1 = tape.layer_norm_rows(x, p.ln1_gain, p.ln1_bias);
  x = tape.add(x, attention_op(tape, h1, h1, p.attn));
  Var h2 = tape.layer_norm_rows(x, p.ln2_gain, p.ln2_bias);
  Var m = tape.gelu(tape.add_rows(tape.matmul(h2, p.mlp_w1), p.mlp_b1));
  m = tape.add_rows(tape.matmul(m, p.mlp_w2), p.mlp_b2);
  return tape.add(x, m);
}

AttentionVars lift(Tape& tape, const AttentionParams& p, bool rg) {
  AttentionVars v;
  v.wq = tape.leaf(p.wq, rg);
  v.wk = tape.leaf(p.wk, rg);
  v.wv = tape.leaf(p.wv, rg);
  v.wo = tape.leaf(p.wo, rg);
  v.heads = p.heads;
  return v;
}

TransformerBlockVars lift(Tape& tape, const TransformerBlockParams& p,
                          bool rg) {
  TransformerBlockVars v;
  v.ln1_gain = tape.leaf(p.ln1_gain, rg);
  v.ln1_bias = tape.leaf(p.ln1_bias, rg);
  v.attn = lift(tape, p.attn, rg);
  v.ln2_gain = tape.leaf(p.ln2_gain, rg);
  v.ln2_bias = tape.leaf(p.ln2_bias, rg);
  v.mlp_w1 = tape.leaf(p.mlp_w1, rg);
  v.mlp_b1 = tape.leaf(p.mlp_b1, rg);
  v.mlp_w2 = tape.leaf(p.mlp_w2, rg);
  v.mlp_b2 = tape.leaf(p.mlp_b2, rg);
  return v;
}

Mat attention(const Mat& q_in, const Mat& kv_in, const AttentionParams& p) {
  Tape tape;
  Var out = attention_op(tape, tape.constant(q_in), tape.constant(kv_in),
                         lift(tape, p));
  return tape.val(out);
}

Var align_to_target_op(Tape& tape, Var template_feats, Var target_patches,
                       const AttentionVars& p) {
  if (tape.rows(target_patches) < 1)
    throw EmptyTarget("align_to_target: empty target grid");
  Var attended = attention_op(tape, template_feats, target_patches, p);
  return tape.add(template_feats, attended);
}

Mat align_to_target(const Mat& template_feats, const PatchFeatureMap& target,
                    const AttentionParams& p) {
  if (target.patches() < 1) throw EmptyTarget("align_to_target: empty target grid");
  Tape tape;
  Var out = align_to_target_op(tape, tape.constant(template_feats),
                               tape.constant(target.grid), lift(tape, p));
  return tape.val(out);
}

ConditioningContext refine_self_attention(
    const Mat& feats, const std::vector<TransformerBlockParams>& layers) {
  if (layers.empty())
    throw DimensionError("refine_self_attention: need at least one layer");
  Tape tape;
  Var x = tape.constant(feats);
  for (const auto& layer : layers)
    x = transformer_block_op(tape, x, lift(tape, layer));
  return ConditioningContext{tape.val(x)};
}

}  // namespace gdeform
