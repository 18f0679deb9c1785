#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "voxray/eval.hpp"

using namespace voxray;

TEST_CASE("perfect predictions score 1.0") {
  std::vector<int> gt = {0, 1, 2, 0, 1, 2};
  MiouResult r = miou(gt, gt, 3);
  CHECK(r.miou == doctest::Approx(1.0).epsilon(1e-12));
  for (auto iou : r.per_class) {
    REQUIRE(iou.has_value());
    CHECK(*iou == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("hand-counted confusion matrix case") {
  std::vector<int> gt = {0, 0, 0, 1, 1};
  std::vector<int> pred = {0, 0, 1, 1, 0};
  MiouResult r = miou(pred, gt, 2);
  // class 0: TP=2 FP=1 FN=1 -> 0.5; class 1: TP=1 FP=1 FN=1 -> 1/3
  REQUIRE(r.per_class[0].has_value());
  REQUIRE(r.per_class[1].has_value());
  CHECK(*r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*r.per_class[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(r.miou == doctest::Approx(5.0 / 12).epsilon(1e-12));
}

TEST_CASE("all-one-class predictor on balanced two-class targets") {
  std::vector<int> gt, pred;
  for (int i = 0; i < 50; ++i) {
    gt.push_back(i % 2);
    pred.push_back(0);
  }
  MiouResult r = miou(pred, gt, 2);
  CHECK(*r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*r.per_class[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.miou == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("classes absent from preds and targets are excluded") {
  std::vector<int> gt = {0, 0, 1};
  std::vector<int> pred = {0, 0, 1};
  MiouResult r = miou(pred, gt, 5);
  CHECK(!r.per_class[3].has_value());
  CHECK(r.miou == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ignored targets and ignored predictions") {
  std::vector<int> gt = {0, 1, kIgnore, 1};
  std::vector<int> pred = {0, kIgnore, 0, 1};
  // ignored targets are skipped entirely; an ignored prediction on a real
  // target counts as a miss (false negative) for that class
  MiouResult r = miou(pred, gt, 2);
  CHECK(*r.per_class[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*r.per_class[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("miou is symmetric under a consistent class relabeling") {
  Rng rng(6);
  std::vector<int> gt, pred;
  for (int i = 0; i < 300; ++i) {
    gt.push_back(rng.uniform_int(0, 3));
    pred.push_back(rng.uniform_int(0, 3));
  }
  MiouResult base = miou(pred, gt, 4);
  int perm[4] = {2, 0, 3, 1};
  std::vector<int> gt2, pred2;
  for (int i = 0; i < 300; ++i) {
    gt2.push_back(perm[gt[i]]);
    pred2.push_back(perm[pred[i]]);
  }
  MiouResult mapped = miou(pred2, gt2, 4);
  CHECK(base.miou == doctest::Approx(mapped.miou).epsilon(1e-12));

  CHECK_THROWS_AS(miou(pred, std::vector<int>(10, 0), 4),
                  std::invalid_argument);
}

TEST_CASE("boundary band marks pixels near instance edges") {
  LabelImage img;
  img.width = 16;
  img.height = 16;
  img.class_id.assign(256, 0);
  img.instance_id.assign(256, 0);
  for (int v = 4; v < 12; ++v)
    for (int u = 4; u < 12; ++u) img.instance_id[v * 16 + u] = 1;

  std::vector<bool> band = boundary_band(img, 1);
  // the box edge and its 1-px surroundings are marked, the deep interior
  // and far corners are not
  CHECK(band[4 * 16 + 4]);
  CHECK(band[3 * 16 + 4]);
  CHECK(band[8 * 16 + 4]);
  CHECK(!band[8 * 16 + 8]);
  CHECK(!band[0]);
  CHECK(!band[15 * 16 + 15]);

  std::vector<bool> wide = boundary_band(img, 3);
  int narrow_count = 0, wide_count = 0;
  for (int p = 0; p < 256; ++p) {
    narrow_count += band[p];
    wide_count += wide[p];
    if (band[p]) CHECK(wide[p]);  // widening is monotone
  }
  CHECK(wide_count > narrow_count);
}

TEST_CASE("debug image dumps render the expected extremes") {
  RayBundle bundle;
  bundle.classes = 2;
  auto add_ray = [&](int u, int v, double p0) {
    RenderedRay rr;
    rr.ray.u = u;
    rr.ray.v = v;
    rr.pixel_probs = (VecX(2) << p0, 1.0 - p0).finished();
    rr.pixel_logits = rr.pixel_probs.array().max(1e-12).log().matrix();
    rr.argmax = p0 >= 0.5 ? 0 : 1;
    bundle.rays.push_back(rr);
  };
  add_ray(0, 0, 1.0);    // certain -> entropy 0
  add_ray(1, 0, 0.5);    // uniform -> entropy ln 2, scaled to 255

  PixelPseudoLabels pseudo;
  pseudo.width = 2;
  pseudo.height = 1;
  pseudo.labels = {0, kIgnore};
  LabelImage gt;
  gt.width = 2;
  gt.height = 1;
  gt.class_id = {0, 0};
  gt.instance_id = {1, 1};

  dump_images(bundle, pseudo, gt, "/tmp/voxray_dump");
  std::ifstream ent("/tmp/voxray_dump_entropy.pgm", std::ios::binary);
  REQUIRE(ent.good());
  std::string magic, dims, maxval;
  ent >> magic;
  CHECK(magic == "P5");
  int w, h, mv;
  ent >> w >> h >> mv;
  ent.get();
  REQUIRE(w == 2);
  REQUIRE(h == 1);
  unsigned char px[2];
  ent.read(reinterpret_cast<char*>(px), 2);
  CHECK(px[0] == 0);
  CHECK(px[1] == 255);
  for (const char* suffix :
       {"_semantic.ppm", "_entropy.pgm", "_correct.ppm", "_pseudo.ppm"}) {
    std::string path = std::string("/tmp/voxray_dump") + suffix;
    std::ifstream f(path);
    CHECK(f.good());
    f.close();
    std::remove(path.c_str());
  }
}

TEST_CASE("parallax diagnostic favors ray casting at larger offsets") {
  SceneConfig cfg;
  cfg.classes = 4;
  cfg.min_objects = 4;
  cfg.max_objects = 6;
  cfg.image_width = 48;
  cfg.image_height = 32;
  cfg.focal = 36.0;
  cfg.spawn_r_max = 16.0;

  std::vector<ParallaxRow> rows =
      parallax_report(cfg, {0.0, 2.0}, {1, 2, 3});
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    CHECK(row.ray_acc > 0.5);
    CHECK(row.persp_acc > 0.0);
    CHECK(row.ray_acc <= 1.0);
  }
  // with no offset the two sources see the same geometry
  CHECK(std::abs(rows[0].ray_acc - rows[0].persp_acc) < 0.15);
  // offset degrades the projection labels, and near boundaries the
  // ray-based labels hold up better
  CHECK(rows[1].persp_acc < rows[0].persp_acc);
  CHECK(rows[1].persp_boundary_acc < rows[0].persp_boundary_acc);
  CHECK(rows[1].ray_boundary_acc > rows[1].persp_boundary_acc);
}
