#include "voxray/eval.hpp"

#include <algorithm>
#include <cmath>

#include "voxray/io.hpp"

namespace voxray {

void ConfusionMatrix::add(int pred, int target) {
  if (target == kIgnore) return;
  if (pred == kIgnore || pred >= classes) {
    ++void_preds[target];  // FN only
    return;
  }
  ++counts[static_cast<size_t>(pred) * classes + target];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (auto c : counts) t += c;
  for (auto c : void_preds) t += c;
  return t;
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out(classes);
  for (int c = 0; c < classes; ++c) {
    int64_t tp = counts[static_cast<size_t>(c) * classes + c];
    int64_t fp = 0, fn = void_preds[c];
    for (int o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += counts[static_cast<size_t>(c) * classes + o];
      fn += counts[static_cast<size_t>(o) * classes + c];
    }
    if (tp + fp + fn == 0) continue;  // class absent everywhere
    out[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
  return out;
}

double ConfusionMatrix::miou() const {
  auto ious = per_class_iou();
  double sum = 0.0;
  int n = 0;
  for (const auto& iou : ious)
    if (iou) {
      sum += *iou;
      ++n;
    }
  return n == 0 ? 0.0 : sum / n;
}

MiouResult miou(const std::vector<int>& preds,
                const std::vector<int>& targets, int classes) {
  if (preds.size() != targets.size())
    throw std::invalid_argument("miou: length mismatch");
  ConfusionMatrix cm(classes);
  for (size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], targets[i]);
  return {cm.per_class_iou(), cm.miou()};
}

std::vector<bool> boundary_band(const LabelImage& img, int band_px) {
  const int w = img.width, h = img.height;
  std::vector<bool> band(static_cast<size_t>(w) * h, false);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      int inst = img.instance_id[v * w + u];
      bool edge = false;
      for (int d = 0; d < 4 && !edge; ++d) {
        const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
        int nu = u + du[d], nv = v + dv[d];
        if (nu < 0 || nu >= w || nv < 0 || nv >= h) continue;
        if (img.instance_id[nv * w + nu] != inst) edge = true;
      }
      if (!edge) continue;
      for (int dv2 = -band_px; dv2 <= band_px; ++dv2)
        for (int du2 = -band_px; du2 <= band_px; ++du2) {
          int nu = u + du2, nv = v + dv2;
          if (nu < 0 || nu >= w || nv < 0 || nv >= h) continue;
          band[nv * w + nu] = true;
        }
    }
  }
  return band;
}

namespace {

const uint8_t kPalette[10][3] = {
    {90, 90, 90},   {220, 70, 60},  {60, 160, 220}, {240, 200, 60},
    {90, 200, 90},  {170, 90, 200}, {240, 140, 40}, {90, 220, 200},
    {200, 120, 120}, {130, 130, 240}};

}  // namespace

void dump_images(const RayBundle& bundle, const PixelPseudoLabels& pseudo,
                 const LabelImage& gt, const std::string& out_prefix) {
  const int w = gt.width, h = gt.height;
  dump_bundle_images(bundle, w, h, out_prefix + "_semantic.ppm",
                     out_prefix + "_entropy.pgm");

  std::vector<uint8_t> correct(static_cast<size_t>(w) * h * 3, 0);
  for (const auto& rr : bundle.rays) {
    size_t i = static_cast<size_t>(rr.ray.v) * w + rr.ray.u;
    bool ok = gt.class_id[i] != kIgnore && rr.argmax == gt.class_id[i];
    // blue = correct, orange = incorrect
    correct[i * 3] = ok ? 56 : 227;
    correct[i * 3 + 1] = ok ? 77 : 138;
    correct[i * 3 + 2] = ok ? 143 : 43;
  }
  write_ppm(out_prefix + "_correct.ppm", w, h, correct);

  std::vector<uint8_t> pl(static_cast<size_t>(w) * h * 3, 0);
  for (size_t i = 0; i < pseudo.labels.size(); ++i) {
    if (pseudo.labels[i] == kIgnore) continue;
    const uint8_t* col = kPalette[pseudo.labels[i] % 10];
    pl[i * 3] = col[0];
    pl[i * 3 + 1] = col[1];
    pl[i * 3 + 2] = col[2];
  }
  write_ppm(out_prefix + "_pseudo.ppm", w, h, pl);
}

namespace {

/// Oracle semantic field: each occupied cell gets high density and
/// near-one-hot logits of the majority ground-truth class of its points.
void fill_oracle_features(CylGrid& grid, const Scan& scan, int classes) {
  // feature layout: [0..C) one-hot class, feature C = occupancy flag
  for (int slot = 0; slot < grid.occupied(); ++slot) {
    std::vector<int> votes(classes, 0);
    for (int i : grid.cell_points[slot]) ++votes[scan.labels[i]];
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (votes[c] > votes[best]) best = c;
    grid.features.col(slot).setZero();
    grid.features(best, slot) = 1.0;
    grid.features(classes, slot) = 1.0;
  }
}

/// A NeRF head wired by hand so that logits = scale * class one-hot and
/// density = high where the occupancy flag is set.
NerfHead oracle_head(int classes) {
  NerfHead head;
  head.feat_dim = classes + 1;
  head.classes = classes;
  head.hidden_dim = classes + 1;
  head.W1 = MatX::Identity(classes + 1, classes + 1);
  head.b1 = VecX::Zero(classes + 1);
  head.W2 = MatX::Zero(classes + 1, classes + 1);
  head.b2 = VecX::Zero(classes + 1);
  for (int c = 0; c < classes; ++c) head.W2(c, c) = 12.0;
  head.W2(classes, classes) = 14.0;  // density = exp(14 * occupancy - 6)
  head.b2(classes) = -6.0;
  return head;
}

}  // namespace

std::vector<ParallaxRow> parallax_report(const SceneConfig& base_config,
                                         const std::vector<double>& offsets,
                                         const std::vector<uint64_t>& seeds,
                                         int band_px) {
  std::vector<ParallaxRow> rows;
  for (double offset : offsets) {
    ParallaxRow row;
    row.offset = offset;
    double n_ray = 0, n_persp = 0, n_ray_band = 0, n_persp_band = 0;
    double ray_ok = 0, persp_ok = 0, ray_ok_band = 0, persp_ok_band = 0;
    for (uint64_t seed : seeds) {
      SceneConfig cfg = base_config;
      cfg.camera_offset_y = offset;
      Scene scene = generate_scene(cfg, seed);
      CameraModel cam = scene.camera();
      Scan scan = simulate_lidar(scene);
      LabelImage gt = render_label_image(scene, cam);
      SegmentMaskSet masks = oracle_masks(gt, seed, 0);

      CylGrid grid = voxelize(scan, 48, 96, 16,
                              {0.0, 1.05 * cfg.spawn_r_max,
                               cfg.ground_z - 0.5, cfg.ground_z + 6.5},
                              cfg.classes + 1);
      fill_oracle_features(grid, scan, cfg.classes);
      NerfHead head = oracle_head(cfg.classes);

      std::vector<std::pair<int, int>> pixels;
      for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) pixels.push_back({u, v});
      RayBundle bundle =
          render_bundle(cam, grid, head, pixels, 384, 0.8,
                        1.4 * cfg.spawn_r_max, 1);
      PixelPseudoLabels ray_labels =
          confidence_sampler(bundle, masks, std::log(cfg.classes) * 0.95);

      // Projection path: each pixel takes the label of the projected
      // point nearest to the camera. Per-pixel stamping keeps the
      // parallax failure mode visible: a point occluded from the camera
      // still lands on a foreground pixel and mislabels it.
      PixelPseudoLabels persp_labels;
      persp_labels.width = gt.width;
      persp_labels.height = gt.height;
      persp_labels.labels.assign(gt.class_id.size(), kIgnore);
      {
        std::vector<double> best_depth(gt.class_id.size(), 0.0);
        for (size_t i = 0; i < scan.size(); ++i) {
          auto proj = project_point(cam, scan.points[i]);
          if (!proj) continue;
          int p = static_cast<int>(proj->v) * gt.width +
                  static_cast<int>(proj->u);
          if (persp_labels.labels[p] != kIgnore &&
              best_depth[p] <= proj->depth)
            continue;
          persp_labels.labels[p] = scan.labels[i];
          best_depth[p] = proj->depth;
        }
      }

      // Accuracy over each method's labeled pixels.
      auto band = boundary_band(gt, band_px);
      for (size_t i = 0; i < gt.class_id.size(); ++i) {
        if (gt.class_id[i] == kIgnore) continue;
        if (ray_labels.labels[i] != kIgnore) {
          bool ok = ray_labels.labels[i] == gt.class_id[i];
          n_ray += 1;
          ray_ok += ok;
          if (band[i]) {
            n_ray_band += 1;
            ray_ok_band += ok;
          }
        }
        if (persp_labels.labels[i] != kIgnore) {
          bool ok = persp_labels.labels[i] == gt.class_id[i];
          n_persp += 1;
          persp_ok += ok;
          if (band[i]) {
            n_persp_band += 1;
            persp_ok_band += ok;
          }
        }
      }
    }
    row.ray_acc = n_ray > 0 ? ray_ok / n_ray : 0.0;
    row.persp_acc = n_persp > 0 ? persp_ok / n_persp : 0.0;
    row.ray_boundary_acc = n_ray_band > 0 ? ray_ok_band / n_ray_band : 0.0;
    row.persp_boundary_acc =
        n_persp_band > 0 ? persp_ok_band / n_persp_band : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace voxray
