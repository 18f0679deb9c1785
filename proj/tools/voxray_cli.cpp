// voxray: synthetic LiDAR+camera scenes, semi-supervised segmentation
// training with a rendered-semantics cue, evaluation and diagnostics.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxray/backbone.hpp"
#include "voxray/eval.hpp"
#include "voxray/geom.hpp"
#include "voxray/grid.hpp"
#include "voxray/train.hpp"

namespace fs = std::filesystem;
using namespace voxray;

namespace {

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string scene_config_text(const SceneConfig& c) {
  std::ostringstream os;
  os << "classes=" << c.classes << "\n"
     << "min_objects=" << c.min_objects << "\n"
     << "max_objects=" << c.max_objects << "\n"
     << "ground_z=" << c.ground_z << "\n"
     << "spawn_r_min=" << c.spawn_r_min << "\n"
     << "spawn_r_max=" << c.spawn_r_max << "\n"
     << "spawn_half_angle=" << c.spawn_half_angle << "\n"
     << "box_size_min=" << c.box_size_min << "\n"
     << "box_size_max=" << c.box_size_max << "\n"
     << "pole_radius_min=" << c.pole_radius_min << "\n"
     << "pole_radius_max=" << c.pole_radius_max << "\n"
     << "pole_height_min=" << c.pole_height_min << "\n"
     << "pole_height_max=" << c.pole_height_max << "\n"
     << "camera_offset_x=" << c.camera_offset_x << "\n"
     << "camera_offset_y=" << c.camera_offset_y << "\n"
     << "camera_offset_z=" << c.camera_offset_z << "\n"
     << "image_width=" << c.image_width << "\n"
     << "image_height=" << c.image_height << "\n"
     << "focal=" << c.focal << "\n"
     << "azimuth_steps=" << c.azimuth_steps << "\n"
     << "elevation_steps=" << c.elevation_steps << "\n"
     << "elev_min=" << c.elev_min << "\n"
     << "elev_max=" << c.elev_max << "\n"
     << "intensity_base=" << c.intensity_base << "\n"
     << "intensity_class_gain=" << c.intensity_class_gain << "\n"
     << "intensity_noise=" << c.intensity_noise << "\n";
  return os.str();
}

struct TrainFlags {
  std::string config, data, out, mode;
  double split = -1.0, lr = -1.0, lambda = -1.0, entropy_threshold = -1.0;
  int epochs = -1, threads = -1;
  int64_t seed = -1;
};

// Config file first, then explicit flags override individual keys.
TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config.empty()) cfg = load_train_config(f.config);
  if (!f.mode.empty()) cfg.mode = parse_mode(f.mode);
  if (f.split >= 0.0) cfg.labeled_fraction = f.split;
  if (f.lr >= 0.0) cfg.learning_rate = f.lr;
  if (f.lambda >= 0.0) cfg.weights.lambda = f.lambda;
  if (f.entropy_threshold >= 0.0)
    cfg.weights.entropy_threshold = f.entropy_threshold;
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.threads >= 0) cfg.threads = f.threads;
  if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
  cfg.weights.epochs = cfg.epochs;
  return cfg;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool need_data) {
  cmd->add_option("--config", f.config, "key=value training config file");
  auto* d = cmd->add_option("--data", f.data, "dataset directory");
  if (need_data) d->required();
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--mode", f.mode,
                  "full | sup-only | perspective | no-sam");
  cmd->add_option("--split", f.split, "labeled fraction in (0,1]");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--lambda", f.lambda, "rendered-term weight");
  cmd->add_option("--entropy-threshold", f.entropy_threshold,
                  "segment acceptance threshold (nats)");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--threads", f.threads, "worker threads (1 = serial)");
  cmd->add_option("--seed", f.seed, "experiment seed");
}

TrainState load_state(const TrainConfig& cfg, int classes,
                      const std::string& dir) {
  TrainState state = TrainState::init(cfg, classes, cfg.seed);
  state.backbone = load_backbone(dir + "/backbone.bin");
  state.vox_head = load_vox_head(dir + "/vox_head.bin");
  if (fs::exists(dir + "/nerf_head.bin"))
    state.nerf_head = load_nerf_head(dir + "/nerf_head.bin");
  return state;
}

int run(int argc, char** argv) {
  CLI::App app{
      "voxray: synthetic LiDAR semantic segmentation with "
      "rendered-semantics self-supervision"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_config, gen_out;
  int gen_count = 60, gen_val = 20, gen_perturb = 1;
  int64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "scene config (key=value)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "training scenes");
  gen->add_option("--val-count", gen_val, "held-out scenes");
  gen->add_option("--perturb", gen_perturb,
                  "segment mask boundary perturbation in pixels");
  gen->add_option("--seed", gen_seed, "generation seed");

  // train
  auto* train = app.add_subcommand("train", "train one model");
  TrainFlags tf;
  add_train_flags(train, tf, true);

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
  TrainFlags ef;
  std::string eval_ckpt;
  add_train_flags(eval_cmd, ef, true);
  eval_cmd->add_option("--checkpoints", eval_ckpt,
                       "directory with backbone.bin/vox_head.bin")
      ->required();

  // ablate
  auto* ablate =
      app.add_subcommand("ablate", "run all four modes over several seeds");
  TrainFlags af;
  int ablate_seeds = 5;
  add_train_flags(ablate, af, true);
  ablate->add_option("--seeds", ablate_seeds, "number of seeds");

  // parallax
  auto* par = app.add_subcommand(
      "parallax", "ray vs projection pseudo-label accuracy per offset");
  std::string par_config, par_out;
  std::vector<double> par_offsets = {0.0, 0.5, 1.0, 2.0};
  int par_seeds = 5, par_band = 2;
  par->add_option("--config", par_config, "scene config (key=value)");
  par->add_option("--out", par_out, "output directory")->required();
  par->add_option("--offsets", par_offsets, "camera offsets (meters)");
  par->add_option("--seeds", par_seeds, "number of scene seeds");
  par->add_option("--band", par_band, "boundary band half-width (px)");

  // render-debug
  auto* dbg = app.add_subcommand(
      "render-debug", "dump semantic/entropy/correctness/pseudo images");
  TrainFlags df;
  std::string dbg_ckpt;
  int dbg_scene = 0;
  add_train_flags(dbg, df, true);
  dbg->add_option("--checkpoints", dbg_ckpt, "checkpoint directory")
      ->required();
  dbg->add_option("--scene-index", dbg_scene, "held-out scene index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // help exits 0; any genuine usage problem exits 1
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    SceneConfig scfg;
    if (!gen_config.empty()) scfg = load_scene_config(gen_config);
    scfg.validate();
    generate_dataset(scfg, gen_count, gen_val,
                     static_cast<uint64_t>(gen_seed), gen_perturb, gen_out);
    write_text(gen_out + "/resolved_scene_config.txt",
               scene_config_text(scfg) + "seed=" + std::to_string(gen_seed) +
                   "\nperturb=" + std::to_string(gen_perturb) + "\n");
    std::cout << "wrote " << gen_count << "+" << gen_val << " scenes to "
              << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    TrainConfig cfg = resolve_train_config(tf);
    Dataset data =
        load_dataset(tf.data, cfg, cfg.labeled_fraction, cfg.seed);
    fs::create_directories(tf.out);
    write_text(tf.out + "/resolved_config.txt", train_config_text(cfg));
    ExperimentResult r = run_experiment(cfg, data, tf.out);
    std::cout << r.report;
    return 0;
  }

  if (eval_cmd->parsed()) {
    TrainConfig cfg = resolve_train_config(ef);
    Dataset data =
        load_dataset(ef.data, cfg, cfg.labeled_fraction, cfg.seed);
    TrainState state = load_state(cfg, data.classes, eval_ckpt);
    MiouResult res = evaluate(state, cfg, data);
    std::ostringstream rep;
    rep << "# mode split seed per_class_iou... miou\n"
        << mode_name(cfg.mode) << " " << cfg.labeled_fraction << " "
        << cfg.seed;
    for (const auto& iou : res.per_class) rep << " " << (iou ? *iou : -1.0);
    rep << " " << res.miou << "\n";
    fs::create_directories(ef.out);
    write_text(ef.out + "/resolved_config.txt", train_config_text(cfg));
    write_text(ef.out + "/report.txt", rep.str());
    std::cout << rep.str();
    return 0;
  }

  if (ablate->parsed()) {
    TrainConfig cfg = resolve_train_config(af);
    fs::create_directories(af.out);
    write_text(af.out + "/resolved_config.txt", train_config_text(cfg));
    std::ostringstream table;
    table << "# mode median_miou seeds\n";
    for (TrainMode mode : {TrainMode::SupOnly, TrainMode::Perspective,
                           TrainMode::NoSam, TrainMode::Full}) {
      std::vector<double> mious;
      for (int s = 1; s <= ablate_seeds; ++s) {
        cfg.mode = mode;
        cfg.seed = static_cast<uint64_t>(s);
        Dataset data =
            load_dataset(af.data, cfg, cfg.labeled_fraction, cfg.seed);
        ExperimentResult r = run_experiment(
            cfg, data, af.out + "/" + mode_name(mode) + "_seed" +
                           std::to_string(s));
        mious.push_back(r.val.miou);
      }
      std::sort(mious.begin(), mious.end());
      table << mode_name(mode) << " " << mious[mious.size() / 2];
      for (double m : mious) table << " " << m;
      table << "\n";
    }
    write_text(af.out + "/ablation.txt", table.str());
    std::cout << table.str();
    return 0;
  }

  if (par->parsed()) {
    SceneConfig scfg;
    if (!par_config.empty()) scfg = load_scene_config(par_config);
    scfg.validate();
    std::vector<uint64_t> seeds;
    for (int s = 1; s <= par_seeds; ++s)
      seeds.push_back(static_cast<uint64_t>(s));
    auto rows = parallax_report(scfg, par_offsets, seeds, par_band);
    std::ostringstream table;
    table << "# offset ray_acc persp_acc ray_boundary_acc "
             "persp_boundary_acc\n";
    for (const auto& r : rows)
      table << r.offset << " " << r.ray_acc << " " << r.persp_acc << " "
            << r.ray_boundary_acc << " " << r.persp_boundary_acc << "\n";
    fs::create_directories(par_out);
    write_text(par_out + "/resolved_scene_config.txt",
               scene_config_text(scfg));
    write_text(par_out + "/parallax.txt", table.str());
    std::cout << table.str();
    return 0;
  }

  if (dbg->parsed()) {
    TrainConfig cfg = resolve_train_config(df);
    Dataset data =
        load_dataset(df.data, cfg, cfg.labeled_fraction, cfg.seed);
    if (dbg_scene < 0 || dbg_scene >= static_cast<int>(data.val.size()))
      throw ConfigError("scene index out of range");
    const SceneRecord& rec = data.val[dbg_scene];
    TrainState state = load_state(cfg, data.classes, dbg_ckpt);
    CylGrid grid = voxelize(rec.scan, cfg.res_r, cfg.res_a, cfg.res_h,
                            cfg.grid_bounds, cfg.feat_dim);
    backbone_forward(state.backbone, grid, rec.scan, nullptr);
    std::vector<std::pair<int, int>> pixels;
    for (int v = 0; v < rec.cam.height; ++v)
      for (int u = 0; u < rec.cam.width; ++u) pixels.push_back({u, v});
    RayBundle bundle = render_bundle(rec.cam, grid, state.nerf_head, pixels,
                                     cfg.samples_per_ray, cfg.near_plane,
                                     cfg.far_plane, cfg.threads);
    SegmentMaskSet masks = rec.masks;
    PixelPseudoLabels pseudo =
        confidence_sampler(bundle, masks, cfg.weights.entropy_threshold);
    fs::create_directories(df.out);
    write_text(df.out + "/resolved_config.txt", train_config_text(cfg));
    dump_images(bundle, pseudo, rec.image,
                df.out + "/scene" + std::to_string(dbg_scene));
    std::cout << "wrote debug images for scene " << dbg_scene << " to "
              << df.out << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
