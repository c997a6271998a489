#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gdeform/io.hpp"
#include "gdeform/trainer.hpp"

namespace fs = std::filesystem;
using namespace gdeform;

namespace {

TrainConfig resolve_config(const std::string& config_path, bool paper_scale) {
  TrainConfig cfg = paper_scale ? TrainConfig::paper_scale() : TrainConfig{};
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw FormatError("cannot open config: " + config_path);
    std::stringstream ss;
    ss << is.rdbuf();
    nlohmann::json defaults = nlohmann::json::parse(config_to_json(cfg));
    nlohmann::json overlay;
    try {
      overlay = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad config JSON: ") + e.what());
    }
    defaults.merge_patch(overlay);
    cfg = config_from_json(defaults.dump());
  }
  return cfg;
}

std::vector<SyntheticPair> load_slice(const std::string& dir, int skip,
                                      int take, DatasetSpec* spec = nullptr) {
  auto pairs = load_dataset(dir, spec);
  if (skip > 0)
    pairs.erase(pairs.begin(),
                pairs.begin() + std::min<size_t>(pairs.size(),
                                                 static_cast<size_t>(skip)));
  if (take >= 0 && static_cast<size_t>(take) < pairs.size())
    pairs.resize(static_cast<size_t>(take));
  return pairs;
}

ViewSet views_from_files(const std::vector<std::string>& view_files,
                         const PointCloud& tmpl, const TrainConfig& cfg) {
  ViewSet views;
  for (const auto& path : view_files) {
    ViewEntry entry;
    entry.map = load_feature_map(path);
    VisibilityMask vis =
        compute_visibility(tmpl, entry.map.pose, entry.map.intr,
                           cfg.splat_radius_px, cfg.m, cfg.eps_z);
    entry.features = sample_features_at(entry.map, tmpl, vis);
    views.views.push_back(std::move(entry));
  }
  return views;
}

int run(int argc, char** argv) {
  CLI::App app{"Template-to-target shape deformation via conditional flow "
               "matching with geometry-guided multi-view conditioning"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_family = "superquadric", gen_out, gen_config;
  int gen_count = 64;
  uint64_t gen_seed = 0;
  gen->add_option("--family", gen_family, "Shape family");
  gen->add_option("--count", gen_count, "Number of pairs");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--config", gen_config, "Config JSON for dimensions");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  std::string tr_config, tr_data, tr_out;
  int tr_skip = 0, tr_take = -1;
  bool tr_paper = false;
  tr->add_option("--config", tr_config, "Config JSON");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--skip", tr_skip, "Skip first N pairs");
  tr->add_option("--take", tr_take, "Use at most N pairs");
  tr->add_flag("--paper-scale", tr_paper, "Start from the full-scale preset");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out;
  int ev_skip = 0, ev_take = -1;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Output table path")->required();
  ev->add_option("--skip", ev_skip, "Skip first N pairs");
  ev->add_option("--take", ev_take, "Use at most N pairs");

  // infer
  auto* in = app.add_subcommand("infer", "Single-step deformation inference");
  std::string in_ckpt, in_template, in_target, in_out;
  std::vector<std::string> in_views;
  in->add_option("--ckpt", in_ckpt, "Checkpoint path")->required();
  in->add_option("--template", in_template, "Template PCF1")->required();
  in->add_option("--views", in_views, "Template view FMF1 files")
      ->required()
      ->expected(-1);
  in->add_option("--target-feat", in_target, "Target FMF1")->required();
  in->add_option("--out", in_out, "Output directory")->required();

  // transfer
  auto* tf = app.add_subcommand("transfer", "Warp a contact map by a field");
  std::string tf_field, tf_template, tf_contact, tf_out;
  tf->add_option("--field", tf_field, "Deformation field (PCF1 container)")
      ->required();
  tf->add_option("--template", tf_template, "Template PCF1")->required();
  tf->add_option("--contact", tf_contact, "Contact values, one per line")
      ->required();
  tf->add_option("--out", tf_out, "Output directory")->required();

  // render
  auto* re = app.add_subcommand("render", "Depth-shaded PGM render");
  std::string re_cloud, re_pose, re_out;
  int re_size = 64;
  double re_focal = 96.0;
  re->add_option("--cloud", re_cloud, "Cloud PCF1")->required();
  re->add_option("--pose", re_pose, "Camera-to-world pose file")->required();
  re->add_option("--out", re_out, "Output PGM path")->required();
  re->add_option("--size", re_size, "Square image size");
  re->add_option("--focal", re_focal, "Focal length in pixels");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference gradient verification");
  std::string gc_config;
  double gc_tol = 1e-4;
  uint64_t gc_seed = 17;
  gc->add_option("--config", gc_config, "Config JSON (tiny dims)");
  gc->add_option("--tolerance", gc_tol, "Max relative error");
  gc->add_option("--seed", gc_seed, "Instance seed");

  // print-config
  auto* pc = app.add_subcommand("print-config", "Write a config JSON");
  bool pc_paper = false;
  pc->add_flag("--paper-scale", pc_paper, "Full-scale preset");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    TrainConfig cfg = resolve_config(gen_config, false);
    DatasetSpec spec = cfg.dataset_spec(gen_count);
    spec.family = gen_family;
    auto pairs = generate_synthetic_pairs(spec, gen_seed);
    save_dataset(gen_out, spec, gen_seed, pairs);
    std::cout << "wrote " << pairs.size() << " pairs to " << gen_out << "\n";
    return 0;
  }

  if (tr->parsed()) {
    TrainConfig cfg = resolve_config(tr_config, tr_paper);
    DatasetSpec spec;
    auto pairs = load_slice(tr_data, tr_skip, tr_take, &spec);
    if (spec.n != cfg.n || spec.d_feat != cfg.d_feat || spec.k_views != cfg.k)
      throw ConfigError("dataset dimensions do not match the config");
    TrainResult result = train(cfg, pairs, &std::cout);
    save_checkpoint(tr_out, result.checkpoint);
    std::cout << "saved checkpoint to " << tr_out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Checkpoint ckpt = load_checkpoint(ev_ckpt);
    auto pairs = load_slice(ev_data, ev_skip, ev_take);
    EvalTable table = evaluate(ckpt, pairs);
    std::ofstream os(ev_out);
    if (!os) throw FormatError("cannot open for writing: " + ev_out);
    os << format_eval_table(table);
    std::cout << "mean cd " << table.mean_cd << " emd " << table.mean_emd
              << " siou " << table.mean_siou << "\n";
    return 0;
  }

  if (in->parsed()) {
    Checkpoint ckpt = load_checkpoint(in_ckpt);
    DeformationModel model = model_from_checkpoint(ckpt);
    PointCloud tmpl = load_pcf(in_template);
    ViewSet views = views_from_files(in_views, tmpl, ckpt.config);
    PatchFeatureMap target = load_feature_map(in_target);
    PairInputs inputs = model.prepare_inputs(tmpl, views, target);
    auto [field, deformed] = model.deform(inputs);

    // Quantize so that template + field reconstructs the written deformed
    // cloud exactly in f32.
    PointCloud field_cloud, deformed_cloud;
    field_cloud.points.resize(tmpl.size(), 3);
    deformed_cloud.points.resize(tmpl.size(), 3);
    for (int i = 0; i < tmpl.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        float t = static_cast<float>(tmpl.points(i, c));
        float d = static_cast<float>(deformed.points(i, c));
        float f = d - t;
        field_cloud.points(i, c) = f;
        deformed_cloud.points(i, c) = t + f;
      }
    }
    fs::create_directories(in_out);
    save_pcf((fs::path(in_out) / "deformed.pcf1").string(), deformed_cloud);
    save_pcf((fs::path(in_out) / "field.pcf1").string(), field_cloud);
    std::cout << "wrote deformed.pcf1 and field.pcf1 to " << in_out << "\n";
    return 0;
  }

  if (tf->parsed()) {
    PointCloud tmpl = load_pcf(tf_template);
    PointCloud field_cloud = load_pcf(tf_field);
    if (field_cloud.size() != tmpl.size())
      throw CorrespondenceError("field and template sizes differ");
    ContactField contact;
    std::ifstream is(tf_contact);
    if (!is) throw FormatError("cannot open contact file: " + tf_contact);
    double v;
    while (is >> v) {
      if (v < 0.0 || v > 1.0)
        throw ConfigError("contact values must lie in [0,1]");
      contact.values.push_back(v);
    }
    DeformationField field{field_cloud.points};
    auto [warped, moved] = transfer_contact_map(field, tmpl, contact);
    fs::create_directories(tf_out);
    save_pcf((fs::path(tf_out) / "warped.pcf1").string(), warped);
    std::ofstream os(fs::path(tf_out) / "contact.txt");
    os.precision(17);
    for (double value : moved.values) os << value << "\n";
    std::cout << "wrote warped.pcf1 and contact.txt to " << tf_out << "\n";
    return 0;
  }

  if (re->parsed()) {
    PointCloud cloud = load_pcf(re_cloud);
    PoseSE3 pose = load_pose(re_pose);
    CameraIntrinsics intr;
    intr.fx = intr.fy = re_focal;
    intr.cx = intr.cy = re_size / 2.0;
    intr.width = intr.height = re_size;
    render_cloud(cloud, pose, intr, re_out);
    std::cout << "wrote " << re_out << "\n";
    return 0;
  }

  if (gc->parsed()) {
    TrainConfig cfg;
    if (!gc_config.empty()) {
      cfg = resolve_config(gc_config, false);
    } else {
      cfg.n = 6;
      cfg.m = 4;
      cfg.k = 2;
      cfg.d_feat = 8;
      cfg.d_geo = 6;
      cfg.attn_width = 8;
      cfg.attn_heads = 2;
      cfg.attn_depth = 1;
      cfg.vel_width = 8;
      cfg.vel_blocks = 2;
      cfg.pos_bands = 1;
      cfg.time_dim = 4;
      cfg.knn_k = 3;
      cfg.image_size = 16;
      cfg.patch_size = 4;
      cfg.focal = 24.0;
    }
    auto pairs = generate_synthetic_pairs(cfg.dataset_spec(1), gc_seed);
    GradCheckReport report = gradient_check(cfg, pairs[0], gc_tol);
    for (const auto& block : report.blocks)
      std::cout << (block.max_rel_err <= gc_tol ? "ok   " : "FAIL ")
                << block.name << " max_rel_err " << block.max_rel_err << "\n";
    std::cout << (report.passed() ? "PASS" : "FAIL") << " (tolerance " << gc_tol
              << ")\n";
    return report.passed() ? 0 : 1;
  }

  if (pc->parsed()) {
    TrainConfig cfg = pc_paper ? TrainConfig::paper_scale() : TrainConfig{};
    std::cout << config_to_json(cfg) << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
