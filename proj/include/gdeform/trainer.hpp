#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gdeform/dataset.hpp"
#include "gdeform/model.hpp"

namespace gdeform {

struct TrainConfig {
  // Model dimensions
  int n = 256;
  int m = 128;
  int k = 4;
  int d_feat = 32;
  int d_geo = 64;
  int attn_width = 64;
  int attn_heads = 8;
  int attn_depth = 2;
  int vel_width = 64;
  int vel_blocks = 2;
  int mlp_ratio = 2;
  int pos_bands = 4;
  int time_dim = 16;
  int knn_k = 8;
  double tau = 0.2;

  // Losses / rendering
  LossWeights loss_weights;
  double sigma_px = 1.5;
  double sil_support_sigmas = 4.0;

  // Optimization
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  int epochs = 300;
  uint64_t seed = 0;
  double cosine_start_frac = 0.5;
  double lr_floor_frac = 0.01;
  int threads = 0;  // 0 = one per batch item up to hardware concurrency

  // Camera / synthetic data
  int image_size = 64;
  int patch_size = 4;
  double focal = 96.0;
  double cam_distance = 2.2;
  int splat_radius_px = 2;
  double eps_z = 0.01;
  uint64_t feature_seed = 0;

  ModelConfig model_config() const;
  DatasetSpec dataset_spec(int count) const;

  // Full-scale training preset (N=1024, K=16 views, D=768 features).
  static TrainConfig paper_scale();
};

TrainConfig config_from_json(const std::string& text);
std::string config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::string& path);

// "GDCK" checkpoint: magic, u32 version, u64 config-JSON length + bytes,
// u32 layout count, entries (u32 name length + name + u64 offset + u8 rank +
// u32 dims...), float32 parameter payload, two same-length Adam moment
// payloads, u32 epoch.
struct Checkpoint {
  uint32_t version = 1;
  TrainConfig config;
  std::vector<ParamEntry> layout;
  std::vector<float> payload;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  uint32_t epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Restores a model whose layout must match the checkpoint exactly.
DeformationModel model_from_checkpoint(const Checkpoint& ckpt);

double cosine_lr(const TrainConfig& cfg, int epoch);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> epoch_means;
};

TrainResult train(const TrainConfig& cfg,
                  const std::vector<SyntheticPair>& dataset,
                  std::ostream* log = nullptr);

struct EvalRow {
  std::string pair_id;
  double cd = 0, emd = 0, siou = 0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  double mean_cd = 0, mean_emd = 0, mean_siou = 0;
};

EvalTable evaluate(const Checkpoint& ckpt,
                   const std::vector<SyntheticPair>& dataset);

// Tab-separated rows with a '#' header and a trailing '# mean' line.
std::string format_eval_table(const EvalTable& table);

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double tolerance = 1e-4;

  bool passed() const {
    for (const auto& b : blocks)
      if (!(b.max_rel_err <= tolerance)) return false;
    return true;
  }
};

// Central finite differences (step 1e-5) over every scalar of every named
// block against the analytic gradient of the total loss. corrupt_block is a
// test fixture: that block's analytic gradient is perturbed and must fail.
GradCheckReport gradient_check(const TrainConfig& cfg,
                               const SyntheticPair& pair, double tolerance,
                               const std::string& corrupt_block = "");

struct ContactField {
  std::vector<double> values;  // per template point, in [0,1]
};

// Dense correspondence carries the contact values unchanged; positions move
// by the field.
std::pair<PointCloud, ContactField> transfer_contact_map(
    const DeformationField& field, const PointCloud& tmpl,
    const ContactField& contact);

// Depth-shaded splat render to binary PGM.
void render_cloud(const PointCloud& cloud, const PoseSE3& pose,
                  const CameraIntrinsics& intr, const std::string& out_path);

}  // namespace gdeform
