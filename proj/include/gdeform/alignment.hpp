#pragma once

#include <vector>

#include "gdeform/features.hpp"
#include "gdeform/tape.hpp"

namespace gdeform {

// Multi-head attention projections. wq/wk/wv are D_in x A (A = working
// width, split across heads); wo maps A back to the query stream width so
// residual connections stay dimension-consistent.
struct AttentionParams {
  Mat wq, wk, wv;
  Mat wo;
  int heads = 1;
};

// Pre-layer-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlockParams {
  Mat ln1_gain, ln1_bias;
  AttentionParams attn;
  Mat ln2_gain, ln2_bias;
  Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Refined per-template-point features conditioning the velocity network.
struct ConditioningContext {
  Mat features;  // N x D
};

// --- Tape-level ops ---------------------------------------------------------

struct AttentionVars {
  Var wq, wk, wv, wo;
  int heads = 1;
};

struct TransformerBlockVars {
  Var ln1_gain, ln1_bias;
  AttentionVars attn;
  Var ln2_gain, ln2_bias;
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// softmax((Q Wq)(K Wk)^T / sqrt(A/h)) (V Wv) per head, concatenated, then Wo.
Var attention_op(Tape& tape, Var q_in, Var kv_in, const AttentionVars& p);

Var transformer_block_op(Tape& tape, Var x, const TransformerBlockVars& p);

AttentionVars lift(Tape& tape, const AttentionParams& p,
                   bool requires_grad = false);
TransformerBlockVars lift(Tape& tape, const TransformerBlockParams& p,
                          bool requires_grad = false);

// --- Value-level operations ---------------------------------------------

Mat attention(const Mat& q_in, const Mat& kv_in, const AttentionParams& p);

// Cross-attention of template rows against the flattened target grid, with
// a residual add of the query stream.
Mat align_to_target(const Mat& template_feats, const PatchFeatureMap& target,
                    const AttentionParams& p);
Var align_to_target_op(Tape& tape, Var template_feats, Var target_patches,
                       const AttentionVars& p);

ConditioningContext refine_self_attention(
    const Mat& feats, const std::vector<TransformerBlockParams>& layers);

}  // namespace gdeform
