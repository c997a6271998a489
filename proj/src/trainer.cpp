#include "gdeform/trainer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cmath>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "gdeform/io.hpp"
#include "gdeform/rng.hpp"

namespace gdeform {

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.n = n;
  mc.m = m;
  mc.k_views = k;
  mc.d_feat = d_feat;
  mc.d_geo = d_geo;
  mc.attn_width = attn_width;
  mc.attn_heads = attn_heads;
  mc.refine_depth = attn_depth;
  mc.vel_width = vel_width;
  mc.vel_blocks = vel_blocks;
  mc.mlp_ratio = mlp_ratio;
  mc.pos_bands = pos_bands;
  mc.time_dim = time_dim;
  mc.knn_k = knn_k;
  mc.tau = tau;
  return mc;
}

DatasetSpec TrainConfig::dataset_spec(int count) const {
  DatasetSpec spec;
  spec.count = count;
  spec.n = n;
  spec.k_views = k;
  spec.d_feat = d_feat;
  spec.m_visible = m;
  spec.image_size = image_size;
  spec.patch_size = patch_size;
  spec.focal = focal;
  spec.cam_distance = cam_distance;
  spec.mask_sigma_px = sigma_px;
  spec.mask_support_sigmas = sil_support_sigmas;
  spec.splat_radius_px = splat_radius_px;
  spec.eps_z = eps_z;
  spec.feature_seed = feature_seed;
  return spec;
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.n = 1024;
  cfg.m = 512;
  cfg.k = 16;
  cfg.d_feat = 768;
  cfg.d_geo = 256;
  cfg.attn_width = 512;
  cfg.attn_heads = 8;
  cfg.lr = 1e-5;
  cfg.epochs = 100;
  cfg.batch_size = 8;
  cfg.image_size = 512;
  cfg.patch_size = 16;
  cfg.focal = 768.0;
  return cfg;
}

namespace {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"n", c.n},
      {"m", c.m},
      {"k", c.k},
      {"d_feat", c.d_feat},
      {"d_geo", c.d_geo},
      {"attn_width", c.attn_width},
      {"attn_heads", c.attn_heads},
      {"attn_depth", c.attn_depth},
      {"vel_width", c.vel_width},
      {"vel_blocks", c.vel_blocks},
      {"mlp_ratio", c.mlp_ratio},
      {"pos_bands", c.pos_bands},
      {"time_dim", c.time_dim},
      {"knn_k", c.knn_k},
      {"tau", c.tau},
      {"loss_weights",
       {{"fm", c.loss_weights.fm},
        {"cd", c.loss_weights.cd},
        {"lap", c.loss_weights.lap},
        {"arap", c.loss_weights.arap},
        {"reg", c.loss_weights.reg},
        {"sil", c.loss_weights.sil}}},
      {"sigma_px", c.sigma_px},
      {"sil_support_sigmas", c.sil_support_sigmas},
      {"lr", c.lr},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"cosine_start_frac", c.cosine_start_frac},
      {"lr_floor_frac", c.lr_floor_frac},
      {"threads", c.threads},
      {"image_size", c.image_size},
      {"patch_size", c.patch_size},
      {"focal", c.focal},
      {"cam_distance", c.cam_distance},
      {"splat_radius_px", c.splat_radius_px},
      {"eps_z", c.eps_z},
      {"feature_seed", c.feature_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.n = j.value("n", c.n);
  c.m = j.value("m", c.m);
  c.k = j.value("k", c.k);
  c.d_feat = j.value("d_feat", c.d_feat);
  c.d_geo = j.value("d_geo", c.d_geo);
  c.attn_width = j.value("attn_width", c.attn_width);
  c.attn_heads = j.value("attn_heads", c.attn_heads);
  c.attn_depth = j.value("attn_depth", c.attn_depth);
  c.vel_width = j.value("vel_width", c.vel_width);
  c.vel_blocks = j.value("vel_blocks", c.vel_blocks);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.pos_bands = j.value("pos_bands", c.pos_bands);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.tau = j.value("tau", c.tau);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.fm = w.value("fm", c.loss_weights.fm);
    c.loss_weights.cd = w.value("cd", c.loss_weights.cd);
    c.loss_weights.lap = w.value("lap", c.loss_weights.lap);
    c.loss_weights.arap = w.value("arap", c.loss_weights.arap);
    c.loss_weights.reg = w.value("reg", c.loss_weights.reg);
    c.loss_weights.sil = w.value("sil", c.loss_weights.sil);
  }
  c.sigma_px = j.value("sigma_px", c.sigma_px);
  c.sil_support_sigmas = j.value("sil_support_sigmas", c.sil_support_sigmas);
  c.lr = j.value("lr", c.lr);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.cosine_start_frac = j.value("cosine_start_frac", c.cosine_start_frac);
  c.lr_floor_frac = j.value("lr_floor_frac", c.lr_floor_frac);
  c.threads = j.value("threads", c.threads);
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.focal = j.value("focal", c.focal);
  c.cam_distance = j.value("cam_distance", c.cam_distance);
  c.splat_radius_px = j.value("splat_radius_px", c.splat_radius_px);
  c.eps_z = j.value("eps_z", c.eps_z);
  c.feature_seed = j.value("feature_seed", c.feature_seed);
}

}  // namespace

TrainConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  TrainConfig cfg;
  from_json(j, cfg);
  if (cfg.n < 1 || cfg.batch_size < 1 || cfg.epochs < 0 || cfg.k < 1)
    throw ConfigError("config values out of range");
  if (!cfg.loss_weights.is_valid())
    throw ConfigError("loss weights must be nonnegative and finite");
  return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  to_json(j, cfg);
  return j.dump(2);
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

// --- Checkpoint I/O ---------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t take_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated checkpoint: " + what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t take_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated checkpoint: " + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f32_payload(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
  }
}

std::vector<float> take_f32_payload(std::istream& is, size_t count,
                                    const std::string& what) {
  std::vector<float> v(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t u = take_u32(is, what);
    std::memcpy(&v[i], &u, 4);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path);
  os.write("GDCK", 4);
  put_u32(os, ckpt.version);
  std::string cfg = config_to_json(ckpt.config);
  put_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u32(os, static_cast<uint32_t>(ckpt.layout.size()));
  for (const auto& e : ckpt.layout) {
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u64(os, e.offset);
    unsigned char rank = static_cast<unsigned char>(e.dims.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (uint32_t d : e.dims) put_u32(os, d);
  }
  put_f32_payload(os, ckpt.payload);
  put_f32_payload(os, ckpt.adam_m);
  put_f32_payload(os, ckpt.adam_v);
  put_u32(os, ckpt.epoch);
  if (!os) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "GDCK", 4) != 0)
    throw FormatError("bad checkpoint magic: " + path);
  Checkpoint ckpt;
  ckpt.version = take_u32(is, path);
  uint64_t cfg_len = take_u64(is, path);
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len)))
    throw FormatError("truncated checkpoint config: " + path);
  ckpt.config = config_from_json(cfg_text);
  uint32_t n_entries = take_u32(is, path);
  uint64_t total = 0;
  for (uint32_t i = 0; i < n_entries; ++i) {
    ParamEntry e;
    uint32_t name_len = take_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw FormatError("truncated checkpoint layout: " + path);
    e.offset = take_u64(is, path);
    unsigned char rank;
    if (!is.read(reinterpret_cast<char*>(&rank), 1))
      throw FormatError("truncated checkpoint layout: " + path);
    for (int d = 0; d < rank; ++d) e.dims.push_back(take_u32(is, path));
    total += e.count();
    ckpt.layout.push_back(std::move(e));
  }
  ckpt.payload = take_f32_payload(is, total, path);
  ckpt.adam_m = take_f32_payload(is, total, path);
  ckpt.adam_v = take_f32_payload(is, total, path);
  ckpt.epoch = take_u32(is, path);
  return ckpt;
}

DeformationModel model_from_checkpoint(const Checkpoint& ckpt) {
  DeformationModel model(ckpt.config.model_config());
  const auto& entries = model.params().entries();
  if (entries.size() != ckpt.layout.size())
    throw ConfigError("checkpoint layout does not match model");
  for (size_t i = 0; i < entries.size(); ++i) {
    const ParamEntry& a = entries[i];
    const ParamEntry& b = ckpt.layout[i];
    if (a.name != b.name || a.offset != b.offset || a.dims != b.dims)
      throw ConfigError("checkpoint layout mismatch at " + b.name);
  }
  if (ckpt.payload.size() != model.params().total())
    throw ConfigError("checkpoint payload length mismatch");
  auto& values = model.params().values();
  for (size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<double>(ckpt.payload[i]);
  return model;
}

double cosine_lr(const TrainConfig& cfg, int epoch) {
  double floor = cfg.lr * cfg.lr_floor_frac;
  int start = static_cast<int>(cfg.cosine_start_frac * cfg.epochs);
  if (epoch < start || cfg.epochs <= start) return cfg.lr;
  double progress = static_cast<double>(epoch - start + 1) /
                    static_cast<double>(cfg.epochs - start);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

namespace {

// The tape allocates many ~0.5 MB matrices per step; above glibc's default
// mmap threshold every one becomes an mmap/munmap round trip and page-fault
// storm. Raising the threshold keeps them on the heap (~2x step speedup).
void tune_allocator_once() {
#if defined(__GLIBC__)
  static std::once_flag flag;
  std::call_once(flag, [] { mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024); });
#endif
}

// Long-lived workers so each thread keeps its malloc arena across batches;
// spawning threads per batch proved slower than running single-threaded.
class WorkerPool {
 public:
  explicit WorkerPool(int n) {
    for (int w = 0; w < n; ++w)
      threads_.emplace_back([this, w] { loop(w); });
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_work_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int size() const { return static_cast<int>(threads_.size()); }

  // Runs job(worker_index, worker_count) on every worker and waits.
  void run(const std::function<void(int, int)>& job) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_ = &job;
      pending_ = threads_.size();
      ++generation_;
    }
    cv_work_.notify_all();
    std::unique_lock<std::mutex> lock(mu_);
    cv_done_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void loop(int w) {
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int, int)>* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_work_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        job = job_;
      }
      if (job) (*job)(w, size());
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(int, int)>* job_ = nullptr;
  size_t pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

PairInputs make_pair_inputs(const DeformationModel& model,
                            const SyntheticPair& pair) {
  PairInputs in =
      model.prepare_inputs(pair.template_cloud, pair.template_views,
                           pair.target_view);
  in.target_pts = pair.target_cloud.points;
  in.sil_targets = pair.gt_masks;
  return in;
}

const char* nonfinite_term(const LossBreakdown& b) {
  if (!std::isfinite(b.fm)) return "fm";
  if (!std::isfinite(b.cd)) return "cd";
  if (!std::isfinite(b.lap)) return "lap";
  if (!std::isfinite(b.arap)) return "arap";
  if (!std::isfinite(b.reg)) return "reg";
  if (!std::isfinite(b.sil)) return "sil";
  if (!std::isfinite(b.total)) return "total";
  return nullptr;
}

}  // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::vector<SyntheticPair>& dataset,
                  std::ostream* log) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  tune_allocator_once();
  DeformationModel model(cfg.model_config());
  model.init_params(cfg.seed);

  std::vector<PairInputs> inputs;
  inputs.reserve(dataset.size());
  for (const auto& pair : dataset) inputs.push_back(make_pair_inputs(model, pair));

  TrainHyper hyper{cfg.loss_weights, cfg.sigma_px, cfg.sil_support_sigmas};
  const size_t total = model.params().total();
  std::vector<double> adam_m(total, 0.0), adam_v(total, 0.0);
  uint64_t adam_step = 0;

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int max_threads = cfg.threads > 0 ? cfg.threads : std::max(1, hw);
  max_threads = std::min(max_threads, cfg.batch_size);
  std::optional<WorkerPool> pool;
  if (max_threads > 1) pool.emplace(max_threads);

  Rng order_rng(Rng::mix(cfg.seed, 0x0BDA7A5EULL));
  Rng t_rng(Rng::mix(cfg.seed, 0x7157EA11ULL));

  std::vector<LossBreakdown> epoch_means;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    order_rng.shuffle(order);
    double lr_e = cosine_lr(cfg, epoch);

    LossBreakdown mean;
    int seen = 0;
    for (size_t base = 0; base < order.size();
         base += static_cast<size_t>(cfg.batch_size)) {
      size_t count = std::min(static_cast<size_t>(cfg.batch_size),
                              order.size() - base);
      std::vector<double> ts(count);
      for (size_t b = 0; b < count; ++b) ts[b] = t_rng.uniform();

      std::vector<std::vector<double>> grads(count);
      std::vector<LossBreakdown> breakdowns(count);
      std::vector<std::string> errors(count);
      auto run_item = [&](size_t b) {
        try {
          breakdowns[b] = model.pair_loss(inputs[static_cast<size_t>(
                                              order[base + b])],
                                          ts[b], hyper, &grads[b]);
        } catch (const std::exception& e) {
          errors[b] = e.what();
        }
      };
      if (pool && count > 1) {
        pool->run([&](int w, int n) {
          for (size_t b = static_cast<size_t>(w); b < count;
               b += static_cast<size_t>(n))
            run_item(b);
        });
      } else {
        for (size_t b = 0; b < count; ++b) run_item(b);
      }
      for (const auto& err : errors)
        if (!err.empty()) throw Error("train: " + err);

      // Merge per-item gradients in item order for determinism.
      std::vector<double> grad(total, 0.0);
      for (size_t b = 0; b < count; ++b) {
        const char* bad = nonfinite_term(breakdowns[b]);
        if (bad)
          throw DivergedError(std::string("train: non-finite loss term ") +
                              bad + " at epoch " + std::to_string(epoch));
        for (size_t i = 0; i < total; ++i) grad[i] += grads[b][i];
        mean.fm += breakdowns[b].fm;
        mean.cd += breakdowns[b].cd;
        mean.lap += breakdowns[b].lap;
        mean.arap += breakdowns[b].arap;
        mean.reg += breakdowns[b].reg;
        mean.sil += breakdowns[b].sil;
        mean.total += breakdowns[b].total;
        ++seen;
      }
      double inv = 1.0 / static_cast<double>(count);
      for (size_t i = 0; i < total; ++i) grad[i] *= inv;

      ++adam_step;
      double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_step));
      double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_step));
      auto& values = model.params().values();
      for (size_t i = 0; i < total; ++i) {
        adam_m[i] = cfg.adam_beta1 * adam_m[i] + (1.0 - cfg.adam_beta1) * grad[i];
        adam_v[i] = cfg.adam_beta2 * adam_v[i] +
                    (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
        double mhat = adam_m[i] / bc1;
        double vhat = adam_v[i] / bc2;
        values[i] -= lr_e * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    }

    double inv = seen > 0 ? 1.0 / seen : 0.0;
    mean.fm *= inv;
    mean.cd *= inv;
    mean.lap *= inv;
    mean.arap *= inv;
    mean.reg *= inv;
    mean.sil *= inv;
    mean.total *= inv;
    epoch_means.push_back(mean);
    if (log) {
      (*log) << "epoch " << epoch << " lr " << lr_e << " total " << mean.total
             << " fm " << mean.fm << " cd " << mean.cd << " lap " << mean.lap
             << " arap " << mean.arap << " reg " << mean.reg << " sil "
             << mean.sil << "\n";
      log->flush();
    }
  }

  TrainResult result;
  result.checkpoint.version = 1;
  result.checkpoint.config = cfg;
  result.checkpoint.layout = model.params().entries();
  result.checkpoint.payload.resize(total);
  result.checkpoint.adam_m.resize(total);
  result.checkpoint.adam_v.resize(total);
  const auto& values = model.params().values();
  for (size_t i = 0; i < total; ++i) {
    result.checkpoint.payload[i] = static_cast<float>(values[i]);
    result.checkpoint.adam_m[i] = static_cast<float>(adam_m[i]);
    result.checkpoint.adam_v[i] = static_cast<float>(adam_v[i]);
  }
  result.checkpoint.epoch = static_cast<uint32_t>(cfg.epochs);
  result.epoch_means = std::move(epoch_means);
  return result;
}

EvalTable evaluate(const Checkpoint& ckpt,
                   const std::vector<SyntheticPair>& dataset) {
  tune_allocator_once();
  DeformationModel model = model_from_checkpoint(ckpt);
  const TrainConfig& cfg = ckpt.config;
  if (!dataset.empty() && dataset[0].template_cloud.size() != cfg.n)
    throw ConfigError("evaluate: dataset N does not match checkpoint config");

  EvalTable table;
  for (const auto& pair : dataset) {
    PairInputs in = make_pair_inputs(model, pair);
    auto [field, deformed] = model.deform(in);
    EvalRow row;
    row.pair_id = pair.id;
    row.cd = metric_cd(deformed, pair.target_cloud);
    row.emd = metric_emd(deformed, pair.target_cloud);
    CameraIntrinsics intr = dataset_intrinsics(cfg.dataset_spec(1));
    SilhouetteMask pred_mask =
        render_silhouette(deformed, pair.observation_pose, intr, cfg.sigma_px,
                          cfg.sil_support_sigmas);
    SilhouetteMask gt_mask =
        render_silhouette(pair.target_cloud, pair.observation_pose, intr,
                          cfg.sigma_px, cfg.sil_support_sigmas);
    row.siou = metric_siou(pred_mask, gt_mask, 0.5);
    table.rows.push_back(std::move(row));
  }
  for (const auto& row : table.rows) {
    table.mean_cd += row.cd;
    table.mean_emd += row.emd;
    table.mean_siou += row.siou;
  }
  if (!table.rows.empty()) {
    table.mean_cd /= static_cast<double>(table.rows.size());
    table.mean_emd /= static_cast<double>(table.rows.size());
    table.mean_siou /= static_cast<double>(table.rows.size());
  }
  return table;
}

std::string format_eval_table(const EvalTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "# pair_id\tcd\temd\tsiou\n";
  for (const auto& row : table.rows)
    os << row.pair_id << "\t" << row.cd << "\t" << row.emd << "\t" << row.siou
       << "\n";
  os << "# mean\t" << table.mean_cd << "\t" << table.mean_emd << "\t"
     << table.mean_siou << "\n";
  return os.str();
}

GradCheckReport gradient_check(const TrainConfig& cfg,
                               const SyntheticPair& pair, double tolerance,
                               const std::string& corrupt_block) {
  tune_allocator_once();
  DeformationModel model(cfg.model_config());
  model.init_params_random(cfg.seed);
  PairInputs in = make_pair_inputs(model, pair);

  // The check evaluates the exact (untruncated) silhouette objective.
  TrainHyper hyper{cfg.loss_weights, cfg.sigma_px,
                   std::numeric_limits<double>::infinity()};
  const double t_sample = 0.375;
  const double h = 1e-5;

  std::vector<double> analytic;
  model.pair_loss(in, t_sample, hyper, &analytic);

  GradCheckReport report;
  report.tolerance = tolerance;
  auto& values = model.params().values();
  for (int e = 0; e < model.params().count(); ++e) {
    const ParamEntry& entry = model.params().entry(e);
    double max_err = 0.0;
    for (uint64_t o = entry.offset; o < entry.offset + entry.count(); ++o) {
      double saved = values[o];
      values[o] = saved + h;
      double lp = model.pair_loss(in, t_sample, hyper, nullptr).total;
      values[o] = saved - h;
      double lm = model.pair_loss(in, t_sample, hyper, nullptr).total;
      values[o] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double a = analytic[o];
      if (entry.name == corrupt_block) a += 1e-2;
      double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      max_err = std::max(max_err, err);
    }
    report.blocks.push_back({entry.name, max_err});
  }
  return report;
}

std::pair<PointCloud, ContactField> transfer_contact_map(
    const DeformationField& field, const PointCloud& tmpl,
    const ContactField& contact) {
  if (field.vectors.rows() != tmpl.size() ||
      static_cast<int>(contact.values.size()) != tmpl.size())
    throw CorrespondenceError("transfer_contact_map: sizes not aligned");
  PointCloud warped;
  warped.id = tmpl.id;
  warped.points = tmpl.points + field.vectors;
  return {std::move(warped), contact};
}

void render_cloud(const PointCloud& cloud, const PoseSE3& pose,
                  const CameraIntrinsics& intr, const std::string& out_path) {
  const int h = intr.height, w = intr.width;
  Mat shade = Mat::Zero(h, w);
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = -std::numeric_limits<double>::infinity();
  std::vector<Projection> proj(static_cast<size_t>(cloud.size()));
  for (int i = 0; i < cloud.size(); ++i) {
    proj[static_cast<size_t>(i)] =
        project_point(cloud.points.row(i).transpose(), pose, intr);
    if (proj[static_cast<size_t>(i)].depth > 0) {
      zmin = std::min(zmin, proj[static_cast<size_t>(i)].depth);
      zmax = std::max(zmax, proj[static_cast<size_t>(i)].depth);
    }
  }
  double range = zmax > zmin ? zmax - zmin : 1.0;
  for (int i = 0; i < cloud.size(); ++i) {
    const Projection& pr = proj[static_cast<size_t>(i)];
    if (pr.depth <= 0) continue;
    // Nearer points render brighter; the splat falls off from its center.
    double value = 1.0 - 0.7 * (pr.depth - zmin) / range;
    int px = static_cast<int>(std::floor(pr.u));
    int py = static_cast<int>(std::floor(pr.v));
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        int x = px + dx, y = py + dy;
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        double falloff = 1.0 - 0.15 * std::max(std::abs(dx), std::abs(dy));
        shade(y, x) = std::max(shade(y, x), value * falloff);
      }
    }
  }
  save_pgm(out_path, shade);
}

}  // namespace gdeform
