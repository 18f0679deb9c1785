#include "voxray/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "voxray/io.hpp"

namespace fs = std::filesystem;

namespace voxray {

TrainMode parse_mode(const std::string& name) {
  if (name == "full") return TrainMode::Full;
  if (name == "sup-only") return TrainMode::SupOnly;
  if (name == "perspective") return TrainMode::Perspective;
  if (name == "no-sam") return TrainMode::NoSam;
  throw ConfigError("unknown mode: " + name);
}

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::Full: return "full";
    case TrainMode::SupOnly: return "sup-only";
    case TrainMode::Perspective: return "perspective";
    case TrainMode::NoSam: return "no-sam";
  }
  return "?";
}

TrainConfig load_train_config(const std::string& path) {
  static const std::set<std::string> kKeys = {
      "epochs",          "learning_rate", "momentum",
      "labeled_fraction", "seed",          "mode",
      "threads",         "feat_dim",      "hidden_dim",
      "kappa",           "res_r",         "res_a",
      "res_h",           "r_min",         "r_max",
      "z_min",           "z_max",         "samples_per_ray",
      "near_plane",      "far_plane",     "mask_perturbation",
      "beta",            "gamma0",        "lambda",
      "mu",              "nu",            "entropy_threshold"};
  auto kv = parse_kv_file(path, kKeys);
  TrainConfig c;
  c.epochs = kv_int(kv, "epochs", c.epochs);
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.momentum = kv_double(kv, "momentum", c.momentum);
  c.labeled_fraction = kv_double(kv, "labeled_fraction", c.labeled_fraction);
  c.seed = static_cast<uint64_t>(
      kv_int(kv, "seed", static_cast<int>(c.seed)));
  c.mode = parse_mode(kv_string(kv, "mode", mode_name(c.mode)));
  c.threads = kv_int(kv, "threads", c.threads);
  c.feat_dim = kv_int(kv, "feat_dim", c.feat_dim);
  c.hidden_dim = kv_int(kv, "hidden_dim", c.hidden_dim);
  c.kappa = kv_double(kv, "kappa", c.kappa);
  c.res_r = kv_int(kv, "res_r", c.res_r);
  c.res_a = kv_int(kv, "res_a", c.res_a);
  c.res_h = kv_int(kv, "res_h", c.res_h);
  c.grid_bounds.r_min = kv_double(kv, "r_min", c.grid_bounds.r_min);
  c.grid_bounds.r_max = kv_double(kv, "r_max", c.grid_bounds.r_max);
  c.grid_bounds.z_min = kv_double(kv, "z_min", c.grid_bounds.z_min);
  c.grid_bounds.z_max = kv_double(kv, "z_max", c.grid_bounds.z_max);
  c.samples_per_ray = kv_int(kv, "samples_per_ray", c.samples_per_ray);
  c.near_plane = kv_double(kv, "near_plane", c.near_plane);
  c.far_plane = kv_double(kv, "far_plane", c.far_plane);
  c.mask_perturbation = kv_int(kv, "mask_perturbation", c.mask_perturbation);
  c.weights.beta = kv_double(kv, "beta", c.weights.beta);
  c.weights.gamma0 = kv_double(kv, "gamma0", c.weights.gamma0);
  c.weights.lambda = kv_double(kv, "lambda", c.weights.lambda);
  c.weights.mu = kv_double(kv, "mu", c.weights.mu);
  c.weights.nu = kv_double(kv, "nu", c.weights.nu);
  c.weights.entropy_threshold =
      kv_double(kv, "entropy_threshold", c.weights.entropy_threshold);
  c.weights.epochs = c.epochs;
  return c;
}

std::string train_config_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "epochs=" << cfg.epochs << "\n"
     << "learning_rate=" << cfg.learning_rate << "\n"
     << "momentum=" << cfg.momentum << "\n"
     << "labeled_fraction=" << cfg.labeled_fraction << "\n"
     << "seed=" << cfg.seed << "\n"
     << "mode=" << mode_name(cfg.mode) << "\n"
     << "threads=" << cfg.threads << "\n"
     << "feat_dim=" << cfg.feat_dim << "\n"
     << "hidden_dim=" << cfg.hidden_dim << "\n"
     << "kappa=" << cfg.kappa << "\n"
     << "res_r=" << cfg.res_r << "\n"
     << "res_a=" << cfg.res_a << "\n"
     << "res_h=" << cfg.res_h << "\n"
     << "r_min=" << cfg.grid_bounds.r_min << "\n"
     << "r_max=" << cfg.grid_bounds.r_max << "\n"
     << "z_min=" << cfg.grid_bounds.z_min << "\n"
     << "z_max=" << cfg.grid_bounds.z_max << "\n"
     << "samples_per_ray=" << cfg.samples_per_ray << "\n"
     << "near_plane=" << cfg.near_plane << "\n"
     << "far_plane=" << cfg.far_plane << "\n"
     << "mask_perturbation=" << cfg.mask_perturbation << "\n"
     << "beta=" << cfg.weights.beta << "\n"
     << "gamma0=" << cfg.weights.gamma0 << "\n"
     << "lambda=" << cfg.weights.lambda << "\n"
     << "mu=" << cfg.weights.mu << "\n"
     << "nu=" << cfg.weights.nu << "\n"
     << "entropy_threshold=" << cfg.weights.entropy_threshold << "\n";
  return os.str();
}

TrainState TrainState::init(const TrainConfig& cfg, int classes,
                            uint64_t seed) {
  TrainState st;
  st.backbone = MiniVoxNet::init(cfg.hidden_dim, cfg.feat_dim, cfg.kappa,
                                 seed * 3 + 1);
  st.vox_head = VoxHead::init(cfg.feat_dim, classes, seed * 3 + 2);
  st.nerf_head = NerfHead::init(cfg.feat_dim, classes, 64, seed * 3 + 3);
  st.backbone_g.init_like(st.backbone);
  st.backbone_m.init_like(st.backbone);
  st.vox_g.init_like(st.vox_head);
  st.vox_m.init_like(st.vox_head);
  st.nerf_g.init_like(st.nerf_head);
  st.nerf_m.init_like(st.nerf_head);
  return st;
}

void TrainState::sgd_step(double lr, double momentum) {
  auto update = [&](auto& w, auto& g, auto& m) {
    m = momentum * m + g;
    w -= lr * m;
  };
  update(backbone.W1, backbone_g.W1, backbone_m.W1);
  update(backbone.b1, backbone_g.b1, backbone_m.b1);
  update(backbone.W2, backbone_g.W2, backbone_m.W2);
  update(backbone.b2, backbone_g.b2, backbone_m.b2);
  update(vox_head.W, vox_g.W, vox_m.W);
  update(vox_head.b, vox_g.b, vox_m.b);
  update(nerf_head.W1, nerf_g.W1, nerf_m.W1);
  update(nerf_head.b1, nerf_g.b1, nerf_m.b1);
  update(nerf_head.W2, nerf_g.W2, nerf_m.W2);
  update(nerf_head.b2, nerf_g.b2, nerf_m.b2);
}

namespace {

/// Gathers per-point logits from per-cell logits; kIgnore target for
/// out-of-bounds points.
void gather_point_logits(const MatX& cell_logits,
                         const std::vector<int>& slots,
                         const std::vector<int>& labels, MatX& logits,
                         std::vector<int>& targets) {
  int n = static_cast<int>(slots.size());
  logits.resize(cell_logits.rows(), n);
  targets.assign(n, kIgnore);
  for (int i = 0; i < n; ++i) {
    if (slots[i] < 0) {
      logits.col(i).setZero();
      continue;
    }
    logits.col(i) = cell_logits.col(slots[i]);
    targets[i] = labels[i];
  }
}

}  // namespace

LossBreakdown train_step(TrainState& state, const TrainConfig& cfg,
                         const SceneRecord& labeled,
                         const std::vector<int>& labels,
                         const SceneRecord* unlabeled, int epoch) {
  if (cfg.mode != TrainMode::SupOnly && unlabeled == nullptr)
    throw ConfigError("mode requires an unlabeled scene");

  LossBreakdown out;
  const LossWeights& w = cfg.weights;
  double gamma = w.gamma(epoch);

  state.backbone_g.zero();
  state.vox_g.zero();
  state.nerf_g.zero();

  // ---- labeled cue ----
  CylGrid grid_l = voxelize(labeled.scan, cfg.res_r, cfg.res_a, cfg.res_h,
                            cfg.grid_bounds, cfg.feat_dim);
  BackboneCache cache_l;
  backbone_forward(state.backbone, grid_l, labeled.scan, &cache_l);
  MatX feat_grads_l = MatX::Zero(cfg.feat_dim, grid_l.occupied());

  // L_3Dvox: per-point logits of the containing cell vs ground truth
  {
    MatX cell_logits = vox_head_forward(state.vox_head, grid_l);
    auto slots = point_slots(grid_l, labeled.scan);
    MatX logits;
    std::vector<int> targets;
    gather_point_logits(cell_logits, slots, labels, logits, targets);
    MatX dlogits;
    out.l3d_vox = term_loss(logits, targets, w.mu, w.nu, &dlogits);
    MatX dcell = MatX::Zero(cell_logits.rows(), cell_logits.cols());
    for (size_t i = 0; i < slots.size(); ++i)
      if (slots[i] >= 0) dcell.col(slots[i]) += w.beta * dlogits.col(i);
    vox_head_backward(state.vox_head, grid_l, dcell, state.vox_g,
                      feat_grads_l);
  }

  // L_3DNeRF: NeRF head logits at raw point coordinates; density
  // receives no supervision here
  if (gamma > 0.0) {
    int n = static_cast<int>(labeled.scan.size());
    MatX logits(state.nerf_head.classes, n);
    std::vector<TrilinearCache> tris(n);
    std::vector<NerfSampleCache> caches(n);
    for (int i = 0; i < n; ++i) {
      VecX feature =
          sample_trilinear(grid_l, labeled.scan.points[i], &tris[i]);
      logits.col(i) =
          nerf_head_forward(state.nerf_head, feature, &caches[i]).logits;
    }
    MatX dlogits;
    out.l3d_nerf = term_loss(logits, labels, w.mu, w.nu, &dlogits);
    for (int i = 0; i < n; ++i) {
      if (labels[i] == kIgnore) continue;
      VecX dfeature = nerf_head_backward(
          state.nerf_head, caches[i], gamma * dlogits.col(i), 0.0,
          state.nerf_g);
      sample_trilinear_backward(tris[i], dfeature, feat_grads_l);
    }
  }

  backbone_backward(state.backbone, grid_l, cache_l, feat_grads_l,
                    state.backbone_g);

  // ---- unlabeled cue ----
  if (cfg.mode != TrainMode::SupOnly) {
    CylGrid grid_u = voxelize(unlabeled->scan, cfg.res_r, cfg.res_a,
                              cfg.res_h, cfg.grid_bounds, cfg.feat_dim);
    BackboneCache cache_u;
    backbone_forward(state.backbone, grid_u, unlabeled->scan, &cache_u);
    MatX feat_grads_u = MatX::Zero(cfg.feat_dim, grid_u.occupied());

    if (cfg.mode == TrainMode::Perspective) {
      // 3D CE+Lovasz on projection pseudo-labels, through the vox head
      auto preds = vox_head_point_predictions(state.vox_head, grid_u,
                                              unlabeled->scan);
      auto pl = perspective_baseline(unlabeled->scan, unlabeled->cam, preds,
                                     unlabeled->masks);
      MatX cell_logits = vox_head_forward(state.vox_head, grid_u);
      auto slots = point_slots(grid_u, unlabeled->scan);
      MatX logits;
      std::vector<int> targets;
      gather_point_logits(cell_logits, slots, pl, logits, targets);
      MatX dlogits;
      out.l2d = term_loss(logits, targets, w.mu, w.nu, &dlogits);
      MatX dcell = MatX::Zero(cell_logits.rows(), cell_logits.cols());
      for (size_t i = 0; i < slots.size(); ++i)
        if (slots[i] >= 0) dcell.col(slots[i]) += w.lambda * dlogits.col(i);
      vox_head_backward(state.vox_head, grid_u, dcell, state.vox_g,
                        feat_grads_u);
      for (int t : targets)
        if (t != kIgnore) ++out.pseudo_pixels;
    } else {
      // Voxel-coverage pixels keep every visible cell supervised; segment
      // (or grid-strided) pixels widen the supervision surface so the
      // rendered term sees whole objects, not just one ray per voxel.
      auto pixels = min_cover_pixels(unlabeled->cam, grid_u, cfg.near_plane,
                                     cfg.far_plane, cfg.samples_per_ray);
      {
        std::set<std::pair<int, int>> have(pixels.begin(), pixels.end());
        auto add = [&](int u, int v) {
          if (have.insert({u, v}).second) pixels.push_back({u, v});
        };
        const int budget = 1600;
        if (cfg.mode == TrainMode::Full) {
          size_t total = 0;
          for (const auto& m : unlabeled->masks.masks)
            total += m.pixels.size();
          size_t stride = std::max<size_t>(1, total / budget);
          for (const auto& m : unlabeled->masks.masks)
            for (size_t i = 0; i < m.pixels.size(); i += stride)
              add(m.pixels[i] % unlabeled->cam.width,
                  m.pixels[i] / unlabeled->cam.width);
        } else {
          int npx = unlabeled->cam.width * unlabeled->cam.height;
          int stride = std::max(1, npx / budget);
          for (int p = 0; p < npx; p += stride)
            add(p % unlabeled->cam.width, p / unlabeled->cam.width);
        }
      }
      RayBundle bundle = render_bundle(
          unlabeled->cam, grid_u, state.nerf_head, pixels,
          cfg.samples_per_ray, cfg.near_plane, cfg.far_plane, cfg.threads);

      PixelPseudoLabels pseudo;
      if (cfg.mode == TrainMode::Full) {
        SegmentMaskSet masks = unlabeled->masks;
        pseudo = confidence_sampler(bundle, masks, w.entropy_threshold);
        for (const auto& r : masks.results)
          if (r.reject == Reject::None) ++out.accepted_segments;
      } else {
        pseudo = nosam_pseudolabels(bundle, unlabeled->cam.width,
                                    unlabeled->cam.height,
                                    w.entropy_threshold);
      }

      int n = static_cast<int>(bundle.rays.size());
      MatX logits(bundle.classes, n);
      std::vector<int> targets(n, kIgnore);
      const bool oracle_hack = std::getenv("VOX_ORACLE_PSEUDO") != nullptr;
      for (int i = 0; i < n; ++i) {
        const auto& rr = bundle.rays[i];
        logits.col(i) = rr.pixel_logits;
        targets[i] =
            pseudo.labels[rr.ray.v * unlabeled->cam.width + rr.ray.u];
        if (oracle_hack)
          targets[i] = unlabeled->image.at_class(rr.ray.u, rr.ray.v);
        if (targets[i] != kIgnore) ++out.pseudo_pixels;
      }
      MatX dlogits;
      out.l2d = term_loss(logits, targets, w.mu, w.nu, &dlogits);
      std::vector<VecX> upstream(n);
      double lam = w.lambda;
      if (std::getenv("VOX_LAMBDA_RAMP"))
        lam *= std::min(1.0, static_cast<double>(epoch) /
                                 std::max(1, w.epochs / 2));
      for (int i = 0; i < n; ++i)
        upstream[i] = (lam * dlogits.col(i)).eval();
      render_bundle_backward(bundle, grid_u, state.nerf_head, upstream,
                             state.nerf_g, feat_grads_u, cfg.threads);
    }

    backbone_backward(state.backbone, grid_u, cache_u, feat_grads_u,
                      state.backbone_g);
  }

  out.total = total_loss(out.l3d_vox, out.l3d_nerf, out.l2d, w, epoch);
  state.sgd_step(cfg.learning_rate, cfg.momentum);
  return out;
}

std::vector<int> infer_points(const TrainState& state, const TrainConfig& cfg,
                              const Scan& scan) {
  CylGrid grid = voxelize(scan, cfg.res_r, cfg.res_a, cfg.res_h,
                          cfg.grid_bounds, cfg.feat_dim);
  backbone_forward(state.backbone, grid, scan, nullptr);
  return vox_head_point_predictions(state.vox_head, grid, scan);
}

MiouResult evaluate(const TrainState& state, const TrainConfig& cfg,
                    const Dataset& data) {
  ConfusionMatrix cm(data.classes);
  for (const auto& rec : data.val) {
    auto preds = infer_points(state, cfg, rec.scan);
    for (size_t i = 0; i < preds.size(); ++i)
      cm.add(preds[i], rec.gt_labels[i]);
  }
  return {cm.per_class_iou(), cm.miou()};
}

void generate_dataset(const SceneConfig& scfg, int count, int val_count,
                      uint64_t seed, int mask_perturbation,
                      const std::string& dir) {
  fs::create_directories(dir);
  auto write_one = [&](const std::string& stem, uint64_t scene_seed) {
    Scene scene = generate_scene(scfg, scene_seed);
    CameraModel cam = scene.camera();
    Scan scan = simulate_lidar(scene);
    LabelImage img = render_label_image(scene, cam);
    SegmentMaskSet masks = oracle_masks(img, scene_seed, mask_perturbation);
    save_scan(scan, dir + "/" + stem + "_scan.sray");
    save_label_image(img, dir + "/" + stem + "_class.pgm",
                     dir + "/" + stem + "_inst.pgm");
    save_masks(masks, dir + "/" + stem + "_masks.pgm",
               dir + "/" + stem + "_masks.txt");
    save_calibration(cam, dir + "/" + stem + "_calib.txt");
  };
  char stem[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(stem, sizeof(stem), "train_%04d", i);
    write_one(stem, seed + i);
  }
  for (int i = 0; i < val_count; ++i) {
    std::snprintf(stem, sizeof(stem), "val_%04d", i);
    write_one(stem, seed + 100000 + i);
  }
  std::ofstream meta(dir + "/meta.txt");
  if (!meta) throw IoError("cannot write dataset metadata");
  meta << "scenes = " << count << "\nval_scenes = " << val_count
       << "\nclasses = " << scfg.classes << "\nseed = " << seed << "\n";
}

namespace {

SceneRecord load_record(const std::string& dir, const std::string& stem) {
  SceneRecord rec;
  rec.scan = load_scan(dir + "/" + stem + "_scan.sray");
  rec.gt_labels = rec.scan.labels;
  rec.image = load_label_image(dir + "/" + stem + "_class.pgm",
                               dir + "/" + stem + "_inst.pgm");
  rec.masks = load_masks(dir + "/" + stem + "_masks.pgm",
                         dir + "/" + stem + "_masks.txt");
  rec.cam = load_calibration(dir + "/" + stem + "_calib.txt");
  return rec;
}

}  // namespace

Dataset load_dataset(const std::string& dir, const TrainConfig& cfg,
                     double labeled_fraction, uint64_t split_seed) {
  if (labeled_fraction <= 0.0 || labeled_fraction > 1.0)
    throw ConfigError("labeled fraction must be in (0, 1]");
  static const std::set<std::string> meta_keys = {"scenes", "val_scenes",
                                                  "classes", "seed"};
  auto meta = parse_kv_file(dir + "/meta.txt", meta_keys);
  int count = kv_int(meta, "scenes", 0);
  int val_count = kv_int(meta, "val_scenes", 0);
  Dataset data;
  data.classes = kv_int(meta, "classes", 0);

  char stem[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(stem, sizeof(stem), "train_%04d", i);
    data.train.push_back(load_record(dir, stem));
  }
  for (int i = 0; i < val_count; ++i) {
    std::snprintf(stem, sizeof(stem), "val_%04d", i);
    data.val.push_back(load_record(dir, stem));
  }

  int n_labeled = std::max(
      1, static_cast<int>(std::lround(labeled_fraction * count)));
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed * 0x9E3779B97F4A7C15ULL + 77);
  std::shuffle(order.begin(), order.end(), rng.engine());
  data.labeled.assign(count, false);
  for (int i = 0; i < n_labeled; ++i) data.labeled[order[i]] = true;
  (void)cfg;
  return data;
}

ExperimentResult run_experiment(const TrainConfig& cfg, Dataset& data,
                                const std::string& out_dir) {
  std::vector<int> labeled_idx, unlabeled_idx;
  for (size_t i = 0; i < data.train.size(); ++i)
    (data.labeled[i] ? labeled_idx : unlabeled_idx).push_back(
        static_cast<int>(i));
  if (labeled_idx.empty()) throw ConfigError("no labeled scenes");
  if (unlabeled_idx.empty()) unlabeled_idx = labeled_idx;

  TrainState state = TrainState::init(cfg, data.classes, cfg.seed);
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 101);

  ExperimentResult result;
  size_t u_cursor = 0;
  std::vector<int> u_order = unlabeled_idx;
  std::shuffle(u_order.begin(), u_order.end(), rng.engine());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> l_order = labeled_idx;
    std::shuffle(l_order.begin(), l_order.end(), rng.engine());
    LossBreakdown epoch_sum;
    for (int li : l_order) {
      if (u_cursor >= u_order.size()) {
        std::shuffle(u_order.begin(), u_order.end(), rng.engine());
        u_cursor = 0;
      }
      const SceneRecord* unl = cfg.mode == TrainMode::SupOnly
                                   ? nullptr
                                   : &data.train[u_order[u_cursor++]];
      auto step = train_step(state, cfg, data.train[li],
                             data.train[li].gt_labels, unl, epoch);
      epoch_sum.l3d_vox += step.l3d_vox;
      epoch_sum.l3d_nerf += step.l3d_nerf;
      epoch_sum.l2d += step.l2d;
      epoch_sum.total += step.total;
      epoch_sum.accepted_segments += step.accepted_segments;
      epoch_sum.pseudo_pixels += step.pseudo_pixels;
    }
    double inv = 1.0 / static_cast<double>(l_order.size());
    epoch_sum.l3d_vox *= inv;
    epoch_sum.l3d_nerf *= inv;
    epoch_sum.l2d *= inv;
    epoch_sum.total *= inv;
    result.epoch_losses.push_back(epoch_sum);
  }

  result.val = evaluate(state, cfg, data);

  std::ostringstream rep;
  rep.precision(6);
  rep << std::fixed;
  rep << "# mode split seed per_class_iou... miou\n";
  rep << mode_name(cfg.mode) << " " << cfg.labeled_fraction << " "
      << cfg.seed;
  for (const auto& iou : result.val.per_class)
    rep << " " << (iou ? *iou : -1.0);
  rep << " " << result.val.miou << "\n";
  result.report = rep.str();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream rf(out_dir + "/report.txt", std::ios::binary);
    rf << result.report;
    std::ofstream lf(out_dir + "/losses.txt", std::ios::binary);
    lf.precision(6);
    lf << std::fixed;
    lf << "# epoch l3d_vox l3d_nerf l2d total accepted_segments "
          "pseudo_pixels\n";
    for (size_t e = 0; e < result.epoch_losses.size(); ++e) {
      const auto& s = result.epoch_losses[e];
      lf << e << " " << s.l3d_vox << " " << s.l3d_nerf << " " << s.l2d
         << " " << s.total << " " << s.accepted_segments << " "
         << s.pseudo_pixels << "\n";
    }
    save_backbone(state.backbone, out_dir + "/backbone.bin");
    save_vox_head(state.vox_head, out_dir + "/vox_head.bin");
    save_nerf_head(state.nerf_head, out_dir + "/nerf_head.bin");
  }
  return result;
}

}  // namespace voxray
