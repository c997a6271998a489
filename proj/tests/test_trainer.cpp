#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdeform/io.hpp"
#include "gdeform/trainer.hpp"
#include "test_util.hpp"

using namespace gdeform;
using namespace gdeform::testutil;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.n = 24;
  cfg.m = 16;
  cfg.k = 2;
  cfg.d_feat = 16;
  cfg.d_geo = 8;
  cfg.attn_width = 8;
  cfg.attn_heads = 2;
  cfg.attn_depth = 1;
  cfg.vel_width = 8;
  cfg.vel_blocks = 2;
  cfg.pos_bands = 1;
  cfg.time_dim = 4;
  cfg.knn_k = 4;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.focal = 48.0;
  cfg.threads = 1;
  return cfg;
}

fs::path test_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("gdeform_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_file_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  return sa == sb;
}

}  // namespace

TEST_CASE("superquadric sampling is corresponded and analytic") {
  SUBCASE("identity parameters reproduce the sphere") {
    Vec3 p = superquadric_point(0.3, 1.1, Vec3(1, 1, 1), 1.0, 1.0);
    Vec3 sphere(std::cos(0.3) * std::cos(1.1), std::cos(0.3) * std::sin(1.1),
                std::sin(0.3));
    CHECK((p - sphere).norm() < 1e-12);
  }
  SUBCASE("z-scaling deforms only z, pre-normalization") {
    for (double eta : {-0.7, 0.1, 1.2}) {
      for (double omega : {-2.0, 0.4}) {
        Vec3 s = superquadric_point(eta, omega, Vec3(1, 1, 1), 1.0, 1.0);
        Vec3 e = superquadric_point(eta, omega, Vec3(1, 1, 2), 1.0, 1.0);
        Vec3 d = e - s;
        CHECK(d.x() == doctest::Approx(0.0));
        CHECK(d.y() == doctest::Approx(0.0));
        CHECK(d.z() == doctest::Approx(s.z() * (2.0 - 1.0)));
      }
    }
  }
}

TEST_CASE("generate_synthetic_pairs determinism and invariants") {
  TrainConfig cfg = tiny_config();
  DatasetSpec spec = cfg.dataset_spec(3);
  auto a = generate_synthetic_pairs(spec, 42);
  auto b = generate_synthetic_pairs(spec, 42);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].template_cloud.points == b[i].template_cloud.points);
    CHECK(a[i].target_cloud.points == b[i].target_cloud.points);
    CHECK(a[i].target_view.grid == b[i].target_view.grid);
    // gt field is exactly the difference of the stored clouds.
    CHECK((a[i].gt_field.vectors -
           (a[i].target_cloud.points - a[i].template_cloud.points))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(static_cast<int>(a[i].template_views.views.size()) == spec.k_views);
    // Normalized clouds live in the half-unit cube.
    CHECK(a[i].template_cloud.points.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
    CHECK(a[i].target_cloud.points.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
  }
  auto c = generate_synthetic_pairs(spec, 43);
  CHECK(a[0].target_cloud.points != c[0].target_cloud.points);

  DatasetSpec bad = spec;
  bad.family = "torus";
  CHECK_THROWS_AS(generate_synthetic_pairs(bad, 1), ConfigError);
}

TEST_CASE("dataset save/load round trip is exact") {
  TrainConfig cfg = tiny_config();
  DatasetSpec spec = cfg.dataset_spec(2);
  auto pairs = generate_synthetic_pairs(spec, 7);
  fs::path dir = test_dir("ds");
  save_dataset(dir.string(), spec, 7, pairs);

  DatasetSpec spec2;
  uint64_t seed2 = 0;
  auto loaded = load_dataset(dir.string(), &spec2, &seed2);
  CHECK(seed2 == 7);
  REQUIRE(loaded.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(loaded[i].template_cloud.points == pairs[i].template_cloud.points);
    CHECK(loaded[i].target_cloud.points == pairs[i].target_cloud.points);
    CHECK(loaded[i].target_view.grid == pairs[i].target_view.grid);
    CHECK(loaded[i].gt_masks[0].mask.values == pairs[i].gt_masks[0].mask.values);
    for (size_t k = 0; k < pairs[i].template_views.views.size(); ++k) {
      CHECK(loaded[i].template_views.views[k].features.features ==
            pairs[i].template_views.views[k].features.features);
      CHECK(loaded[i].template_views.views[k].features.point_indices ==
            pairs[i].template_views.views[k].features.point_indices);
    }
  }

  // Regenerating into a second directory gives byte-identical files.
  fs::path dir2 = test_dir("ds2");
  save_dataset(dir2.string(), spec, 7, generate_synthetic_pairs(spec, 7));
  CHECK(same_file_bytes(dir / "index.json", dir2 / "index.json"));
  CHECK(same_file_bytes(dir / "pair_0000" / "template.pcf1",
                        dir2 / "pair_0000" / "template.pcf1"));
  CHECK(same_file_bytes(dir / "pair_0001" / "target_view.fmf1",
                        dir2 / "pair_0001" / "target_view.fmf1"));
  CHECK(same_file_bytes(dir / "pair_0000" / "mask_01.mkf1",
                        dir2 / "pair_0000" / "mask_01.mkf1"));
}

TEST_CASE("config JSON round trip") {
  TrainConfig cfg = tiny_config();
  cfg.loss_weights.cd = 55.5;
  cfg.seed = 99;
  std::string text = config_to_json(cfg);
  TrainConfig back = config_from_json(text);
  CHECK(back.n == cfg.n);
  CHECK(back.loss_weights.cd == cfg.loss_weights.cd);
  CHECK(back.seed == cfg.seed);
  CHECK(back.tau == cfg.tau);
  CHECK(config_to_json(back) == text);

  CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{\"n\": -3}"), ConfigError);
  CHECK_THROWS_AS(
      config_from_json("{\"loss_weights\": {\"cd\": -1.0}}"), ConfigError);
}

TEST_CASE("paper-scale preset carries the published hyperparameters") {
  TrainConfig p = TrainConfig::paper_scale();
  CHECK(p.n == 1024);
  CHECK(p.m == 512);
  CHECK(p.k == 16);
  CHECK(p.d_feat == 768);
  CHECK(p.lr == doctest::Approx(1e-5));
  CHECK(p.epochs == 100);
  CHECK(p.batch_size == 8);
  CHECK(p.image_size == 512);
  CHECK(p.loss_weights.cd == doctest::Approx(100.0));
  CHECK(p.loss_weights.sil == doctest::Approx(5.0));
  CHECK(p.loss_weights.fm == doctest::Approx(1.0));
  CHECK(p.cosine_start_frac == doctest::Approx(0.5));
}

TEST_CASE("cosine schedule anneals from the midpoint") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e-3;
  cfg.epochs = 100;
  CHECK(cosine_lr(cfg, 0) == doctest::Approx(1e-3));
  CHECK(cosine_lr(cfg, 49) == doctest::Approx(1e-3));
  CHECK(cosine_lr(cfg, 75) < 1e-3);
  CHECK(cosine_lr(cfg, 99) == doctest::Approx(1e-5).epsilon(0.01));
  for (int e = 50; e < 99; ++e) CHECK(cosine_lr(cfg, e) >= cosine_lr(cfg, e + 1));
}

TEST_CASE("checkpoint save/load round trip") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(2), 5);
  TrainResult r = train(cfg, pairs);
  fs::path dir = test_dir("ckpt");
  std::string path = (dir / "model.gdck").string();
  save_checkpoint(path, r.checkpoint);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.version == r.checkpoint.version);
  CHECK(back.epoch == r.checkpoint.epoch);
  CHECK(back.payload == r.checkpoint.payload);
  CHECK(back.adam_m == r.checkpoint.adam_m);
  CHECK(back.layout.size() == r.checkpoint.layout.size());
  for (size_t i = 0; i < back.layout.size(); ++i) {
    CHECK(back.layout[i].name == r.checkpoint.layout[i].name);
    CHECK(back.layout[i].offset == r.checkpoint.layout[i].offset);
    CHECK(back.layout[i].dims == r.checkpoint.layout[i].dims);
  }
  // Saving the loaded checkpoint reproduces the file byte for byte.
  std::string path2 = (dir / "model2.gdck").string();
  save_checkpoint(path2, back);
  CHECK(same_file_bytes(path, path2));

  std::ofstream bad(dir / "bad.gdck", std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.gdck").string()), FormatError);
}

TEST_CASE("zero-epoch training equals initialization and deforms identically") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(2), 5);
  TrainResult r = train(cfg, pairs);

  DeformationModel fresh(cfg.model_config());
  fresh.init_params(cfg.seed);
  const auto& values = fresh.params().values();
  REQUIRE(r.checkpoint.payload.size() == values.size());
  for (size_t i = 0; i < values.size(); ++i)
    CHECK(r.checkpoint.payload[i] == static_cast<float>(values[i]));

  // Zero-initialized head: the deformation is the identity.
  DeformationModel restored = model_from_checkpoint(r.checkpoint);
  PairInputs in = restored.prepare_inputs(
      pairs[0].template_cloud, pairs[0].template_views, pairs[0].target_view);
  auto [field, deformed] = restored.deform(in);
  CHECK(field.vectors.cwiseAbs().maxCoeff() == 0.0);
  CHECK(deformed.points == pairs[0].template_cloud.points);
}

TEST_CASE("identity pairs keep every loss at zero through training") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  DatasetSpec spec = cfg.dataset_spec(2);
  auto pairs = generate_synthetic_pairs(spec, 11);
  for (auto& pair : pairs) {
    // Force target = template (and consistent views/masks).
    pair.target_cloud = pair.template_cloud;
    pair.gt_field.vectors.setZero();
    CameraIntrinsics intr = dataset_intrinsics(spec);
    for (size_t k = 0; k < pair.gt_masks.size(); ++k)
      pair.gt_masks[k].mask = render_silhouette(
          pair.template_cloud, pair.gt_masks[k].pose, intr, spec.mask_sigma_px,
          spec.mask_support_sigmas);
    pair.target_view = synthetic_feature_map(
        pair.template_cloud, pair.observation_pose, intr, spec.d_feat,
        spec.feature_seed, spec.patch_size);
  }
  std::ostringstream log;
  TrainResult r = train(cfg, pairs, &log);
  for (const auto& mean : r.epoch_means) {
    CHECK(mean.cd <= 1e-6);
    CHECK(mean.fm <= 1e-6);
    CHECK(mean.total <= 1e-4);
  }
  CHECK(log.str().find("epoch 0") != std::string::npos);
}

TEST_CASE("training is deterministic per seed") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.threads = 2;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(3), 21);
  TrainResult a = train(cfg, pairs);
  TrainResult b = train(cfg, pairs);
  CHECK(a.checkpoint.payload == b.checkpoint.payload);
  CHECK(a.checkpoint.adam_m == b.checkpoint.adam_m);
  CHECK(a.checkpoint.adam_v == b.checkpoint.adam_v);

  fs::path dir = test_dir("det");
  save_checkpoint((dir / "a.gdck").string(), a.checkpoint);
  save_checkpoint((dir / "b.gdck").string(), b.checkpoint);
  CHECK(same_file_bytes(dir / "a.gdck", dir / "b.gdck"));
}

TEST_CASE("evaluate: identity pairs with a zero-head checkpoint") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  DatasetSpec spec = cfg.dataset_spec(3);
  auto pairs = generate_synthetic_pairs(spec, 13);
  for (auto& pair : pairs) {
    pair.target_cloud = pair.template_cloud;
    pair.gt_field.vectors.setZero();
  }
  TrainResult r = train(cfg, pairs);
  EvalTable table = evaluate(r.checkpoint, pairs);
  REQUIRE(table.rows.size() == pairs.size());
  double sum_cd = 0, sum_emd = 0, sum_siou = 0;
  for (const auto& row : table.rows) {
    CHECK(row.cd == doctest::Approx(0.0));
    CHECK(row.emd == doctest::Approx(0.0));
    CHECK(row.siou == doctest::Approx(1.0));
    sum_cd += row.cd;
    sum_emd += row.emd;
    sum_siou += row.siou;
  }
  CHECK(table.mean_cd == doctest::Approx(sum_cd / 3.0));
  CHECK(table.mean_emd == doctest::Approx(sum_emd / 3.0));
  CHECK(table.mean_siou == doctest::Approx(sum_siou / 3.0));

  std::string text = format_eval_table(table);
  CHECK(text.find("# pair_id") == 0);
  CHECK(text.find("pair_0000\t") != std::string::npos);
  CHECK(text.find("# mean\t") != std::string::npos);

  // Round trip through a file and re-evaluation gives the same table text.
  fs::path dir = test_dir("eval");
  save_checkpoint((dir / "m.gdck").string(), r.checkpoint);
  Checkpoint back = load_checkpoint((dir / "m.gdck").string());
  CHECK(format_eval_table(evaluate(back, pairs)) == text);
}

TEST_CASE("transfer_contact_map rides the field") {
  Rng rng(301);
  PointCloud tmpl = random_cloud(rng, 10, 0.5);
  ContactField contact;
  for (int i = 0; i < 10; ++i) contact.values.push_back(i / 10.0);

  SUBCASE("zero field changes nothing") {
    DeformationField zero{Mat::Zero(10, 3)};
    auto [cloud, moved] = transfer_contact_map(zero, tmpl, contact);
    CHECK(cloud.points == tmpl.points);
    CHECK(moved.values == contact.values);
  }
  SUBCASE("translation keeps values attached") {
    DeformationField shift{Mat::Zero(10, 3)};
    shift.vectors.col(1).setConstant(0.3);
    auto [cloud, moved] = transfer_contact_map(shift, tmpl, contact);
    CHECK(moved.values == contact.values);
    CHECK((cloud.points.col(1) - (tmpl.points.col(1).array() + 0.3).matrix())
              .cwiseAbs()
              .maxCoeff() < 1e-15);
  }
  SUBCASE("value multiset invariant under arbitrary fields") {
    DeformationField field{random_mat(rng, 10, 3)};
    auto [cloud, moved] = transfer_contact_map(field, tmpl, contact);
    auto a = moved.values;
    auto b = contact.values;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  SUBCASE("misaligned sizes throw") {
    DeformationField bad{Mat::Zero(9, 3)};
    CHECK_THROWS_AS(transfer_contact_map(bad, tmpl, contact),
                    CorrespondenceError);
  }
}

TEST_CASE("render_cloud writes deterministic depth-shaded images") {
  fs::path dir = test_dir("render");
  CameraIntrinsics intr;
  intr.fx = intr.fy = 48;
  intr.cx = intr.cy = 16;
  intr.width = intr.height = 32;
  PoseSE3 identity;

  PointCloud center;
  center.points = Mat::Zero(1, 3);
  center.points(0, 2) = 1.0;
  std::string p1 = (dir / "a.pgm").string();
  std::string p2 = (dir / "b.pgm").string();
  render_cloud(center, identity, intr, p1);
  render_cloud(center, identity, intr, p2);
  CHECK(same_file_bytes(p1, p2));

  std::ifstream img(p1, std::ios::binary);
  std::string header;
  std::getline(img, header);
  CHECK(header == "P5");
  std::string dims;
  std::getline(img, dims);
  CHECK(dims == "32 32");
  std::string depth;
  std::getline(img, depth);
  std::string bytes((std::istreambuf_iterator<char>(img)), {});
  REQUIRE(bytes.size() == 32 * 32);
  // Brightest pixel at the principal point.
  size_t best = 0;
  for (size_t i = 0; i < bytes.size(); ++i)
    if (static_cast<unsigned char>(bytes[i]) >
        static_cast<unsigned char>(bytes[best]))
      best = i;
  CHECK(best % 32 == 16);
  CHECK(best / 32 == 16);

  PointCloud behind;
  behind.points = Mat::Zero(1, 3);
  behind.points(0, 2) = -1.0;
  std::string p3 = (dir / "c.pgm").string();
  render_cloud(behind, identity, intr, p3);
  std::ifstream img3(p3, std::ios::binary);
  std::getline(img3, header);
  std::getline(img3, header);
  std::getline(img3, header);
  std::string bytes3((std::istreambuf_iterator<char>(img3)), {});
  for (char b : bytes3) CHECK(b == 0);
}

TEST_CASE("gradient_check validates every block and flags corruption") {
  TrainConfig cfg;
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
  cfg.seed = 3;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(1), 17);
  REQUIRE(pairs.size() == 1);

  GradCheckReport report = gradient_check(cfg, pairs[0], 1e-4);
  CHECK(report.blocks.size() > 20);
  for (const auto& block : report.blocks) {
    INFO(block.name, " rel err ", block.max_rel_err);
    CHECK(block.max_rel_err <= 1e-4);
  }
  CHECK(report.passed());

  GradCheckReport corrupted =
      gradient_check(cfg, pairs[0], 1e-4, "pose.w");
  CHECK(!corrupted.passed());
  bool found = false;
  for (const auto& block : corrupted.blocks)
    if (block.name == "pose.w") {
      found = true;
      CHECK(block.max_rel_err > 1e-4);
    }
  CHECK(found);
}

TEST_CASE("divergent training aborts naming the offending term") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 4;
  cfg.lr = 1e155;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(2), 31);
  CHECK_THROWS_AS(train(cfg, pairs), DivergedError);
}

TEST_CASE("evaluate rejects incompatible datasets") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  auto pairs = generate_synthetic_pairs(cfg.dataset_spec(1), 5);
  TrainResult r = train(cfg, pairs);
  TrainConfig other = cfg;
  other.n = cfg.n + 8;
  auto wrong = generate_synthetic_pairs(other.dataset_spec(1), 5);
  CHECK_THROWS_AS(evaluate(r.checkpoint, wrong), ConfigError);
}
