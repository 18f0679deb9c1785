#include "voxray/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "voxray/io.hpp"

namespace voxray {

std::optional<double> intersect(const Primitive& prim, const Vec3& origin,
                                const Vec3& dir) {
  constexpr double kEps = 1e-12;
  switch (prim.kind) {
    case Primitive::Kind::GroundPlane: {
      if (std::abs(dir.z()) < kEps) return std::nullopt;
      double t = (prim.plane_z - origin.z()) / dir.z();
      if (t <= kEps) return std::nullopt;
      return t;
    }
    case Primitive::Kind::Box: {
      double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        if (std::abs(dir(i)) < kEps) {
          if (origin(i) < prim.box_min(i) || origin(i) > prim.box_max(i))
            return std::nullopt;
          continue;
        }
        double inv = 1.0 / dir(i);
        double a = (prim.box_min(i) - origin(i)) * inv;
        double b = (prim.box_max(i) - origin(i)) * inv;
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
        if (t0 > t1) return std::nullopt;
      }
      if (t0 <= kEps) return std::nullopt;  // origin inside or behind
      return t0;
    }
    case Primitive::Kind::Pole: {
      double ox = origin.x() - prim.pole_x, oy = origin.y() - prim.pole_y;
      double dx = dir.x(), dy = dir.y();
      double a = dx * dx + dy * dy;
      double hit_t = -1.0;
      if (a > kEps) {
        double bq = 2 * (ox * dx + oy * dy);
        double cq = ox * ox + oy * oy - prim.pole_radius * prim.pole_radius;
        double disc = bq * bq - 4 * a * cq;
        if (disc >= 0) {
          double sq = std::sqrt(disc);
          for (double t : {(-bq - sq) / (2 * a), (-bq + sq) / (2 * a)}) {
            if (t <= kEps) continue;
            double z = origin.z() + t * dir.z();
            if (z < prim.pole_z0 || z > prim.pole_z1) continue;
            hit_t = t;
            break;
          }
        }
      }
      // caps
      for (double zc : {prim.pole_z0, prim.pole_z1}) {
        if (std::abs(dir.z()) < kEps) continue;
        double t = (zc - origin.z()) / dir.z();
        if (t <= kEps) continue;
        double x = origin.x() + t * dir.x() - prim.pole_x;
        double y = origin.y() + t * dir.y() - prim.pole_y;
        if (x * x + y * y > prim.pole_radius * prim.pole_radius) continue;
        if (hit_t < 0 || t < hit_t) hit_t = t;
      }
      if (hit_t < 0) return std::nullopt;
      return hit_t;
    }
  }
  return std::nullopt;
}

void SceneConfig::validate() const {
  if (classes < 2) throw ConfigError("scene requires at least 2 classes");
  if (min_objects < 0 || max_objects < min_objects)
    throw ConfigError("bad object count range");
  if (spawn_r_min <= 0 || spawn_r_max <= spawn_r_min)
    throw ConfigError("bad spawn radius band");
  double off = std::hypot(camera_offset_x, camera_offset_y);
  if (off > spawn_r_min)
    throw ConfigError("camera offset places camera outside the clear zone");
  if (image_width <= 0 || image_height <= 0 || focal <= 0)
    throw ConfigError("bad camera parameters");
}

SceneConfig load_scene_config(const std::string& path) {
  static const std::set<std::string> keys = {
      "classes", "min_objects", "max_objects", "ground_z",
      "spawn_r_min", "spawn_r_max", "spawn_half_angle",
      "box_size_min", "box_size_max",
      "pole_radius_min", "pole_radius_max",
      "pole_height_min", "pole_height_max",
      "camera_offset_x", "camera_offset_y", "camera_offset_z",
      "image_width", "image_height", "focal",
      "azimuth_steps", "elevation_steps", "elev_min", "elev_max",
      "intensity_base", "intensity_class_gain", "intensity_noise"};
  auto kv = parse_kv_file(path, keys);
  SceneConfig c;
  c.classes = kv_int(kv, "classes", c.classes);
  c.min_objects = kv_int(kv, "min_objects", c.min_objects);
  c.max_objects = kv_int(kv, "max_objects", c.max_objects);
  c.ground_z = kv_double(kv, "ground_z", c.ground_z);
  c.spawn_r_min = kv_double(kv, "spawn_r_min", c.spawn_r_min);
  c.spawn_r_max = kv_double(kv, "spawn_r_max", c.spawn_r_max);
  c.spawn_half_angle = kv_double(kv, "spawn_half_angle", c.spawn_half_angle);
  c.box_size_min = kv_double(kv, "box_size_min", c.box_size_min);
  c.box_size_max = kv_double(kv, "box_size_max", c.box_size_max);
  c.pole_radius_min = kv_double(kv, "pole_radius_min", c.pole_radius_min);
  c.pole_radius_max = kv_double(kv, "pole_radius_max", c.pole_radius_max);
  c.pole_height_min = kv_double(kv, "pole_height_min", c.pole_height_min);
  c.pole_height_max = kv_double(kv, "pole_height_max", c.pole_height_max);
  c.camera_offset_x = kv_double(kv, "camera_offset_x", c.camera_offset_x);
  c.camera_offset_y = kv_double(kv, "camera_offset_y", c.camera_offset_y);
  c.camera_offset_z = kv_double(kv, "camera_offset_z", c.camera_offset_z);
  c.image_width = kv_int(kv, "image_width", c.image_width);
  c.image_height = kv_int(kv, "image_height", c.image_height);
  c.focal = kv_double(kv, "focal", c.focal);
  c.azimuth_steps = kv_int(kv, "azimuth_steps", c.azimuth_steps);
  c.elevation_steps = kv_int(kv, "elevation_steps", c.elevation_steps);
  c.elev_min = kv_double(kv, "elev_min", c.elev_min);
  c.elev_max = kv_double(kv, "elev_max", c.elev_max);
  c.intensity_base = kv_double(kv, "intensity_base", c.intensity_base);
  c.intensity_class_gain =
      kv_double(kv, "intensity_class_gain", c.intensity_class_gain);
  c.intensity_noise = kv_double(kv, "intensity_noise", c.intensity_noise);
  c.validate();
  return c;
}

CameraModel Scene::camera() const {
  CameraModel cam;
  cam.fx = cam.fy = config.focal;
  cam.cx = config.image_width / 2.0;
  cam.cy = config.image_height / 2.0;
  cam.width = config.image_width;
  cam.height = config.image_height;
  // camera looks along LiDAR +x; +x_cam = -y_lidar (right), +y_cam =
  // -z_lidar (down), +z_cam = +x_lidar (forward)
  cam.rotation.col(0) = Vec3(0, -1, 0);
  cam.rotation.col(1) = Vec3(0, 0, -1);
  cam.rotation.col(2) = Vec3(1, 0, 0);
  cam.translation = camera_offset;
  return cam;
}

Scene generate_scene(const SceneConfig& config, uint64_t seed) {
  config.validate();
  Scene scene;
  scene.config = config;
  scene.seed = seed;
  scene.camera_offset = Vec3(config.camera_offset_x, config.camera_offset_y,
                             config.camera_offset_z);

  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 1);

  Primitive ground;
  ground.kind = Primitive::Kind::GroundPlane;
  ground.class_id = 0;
  ground.instance_id = 1;
  ground.plane_z = config.ground_z;
  scene.objects.push_back(ground);

  int count = rng.uniform_int(config.min_objects, config.max_objects);
  int object_classes = config.classes - 1;
  for (int i = 0; i < count; ++i) {
    Primitive prim;
    prim.instance_id = static_cast<int>(scene.objects.size()) + 1;
    prim.class_id = 1 + rng.uniform_int(0, object_classes - 1);
    double r = rng.uniform(config.spawn_r_min, config.spawn_r_max);
    double ang = rng.uniform(-config.spawn_half_angle,
                             config.spawn_half_angle);
    double x = r * std::cos(ang), y = r * std::sin(ang);
    // vertical extent correlates with class so geometry carries a class
    // cue alongside intensity
    double height_scale = 0.6 + 0.22 * prim.class_id;
    if (rng.uniform_int(0, 2) != 0) {  // 2/3 boxes
      prim.kind = Primitive::Kind::Box;
      double sx = rng.uniform(config.box_size_min, config.box_size_max);
      double sy = rng.uniform(config.box_size_min, config.box_size_max);
      double sz =
          rng.uniform(config.box_size_min, config.box_size_max) * height_scale;
      prim.box_min = Vec3(x - sx / 2, y - sy / 2, config.ground_z);
      prim.box_max = Vec3(x + sx / 2, y + sy / 2, config.ground_z + sz);
    } else {
      prim.kind = Primitive::Kind::Pole;
      prim.pole_x = x;
      prim.pole_y = y;
      prim.pole_radius =
          rng.uniform(config.pole_radius_min, config.pole_radius_max);
      prim.pole_z0 = config.ground_z;
      prim.pole_z1 =
          config.ground_z +
          rng.uniform(config.pole_height_min, config.pole_height_max) *
              height_scale;
    }
    scene.objects.push_back(prim);
  }
  return scene;
}

namespace {

struct Hit {
  double t;
  const Primitive* prim;
};

std::optional<Hit> nearest_hit(const Scene& scene, const Vec3& origin,
                               const Vec3& dir) {
  std::optional<Hit> best;
  for (const auto& prim : scene.objects) {
    auto t = intersect(prim, origin, dir);
    if (!t) continue;
    if (!best || *t < best->t) best = Hit{*t, &prim};
  }
  return best;
}

}  // namespace

Scan simulate_lidar(const Scene& scene) {
  const auto& cfg = scene.config;
  Scan scan;
  scan.classes = cfg.classes;
  Rng rng(scene.seed * 0x9E3779B97F4A7C15ULL + 2);
  Vec3 origin = Vec3::Zero();
  for (int ei = 0; ei < cfg.elevation_steps; ++ei) {
    double elev = cfg.elev_min + (cfg.elev_max - cfg.elev_min) *
                                     (ei + 0.5) / cfg.elevation_steps;
    for (int ai = 0; ai < cfg.azimuth_steps; ++ai) {
      double az = kTwoPi * ai / cfg.azimuth_steps;
      Vec3 dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
               std::sin(elev));
      auto hit = nearest_hit(scene, origin, dir);
      // Every beam consumes one noise draw so point sets stay aligned
      // across configs that differ only in geometry.
      double noise = rng.normal(0.0, cfg.intensity_noise);
      if (!hit) continue;
      if (hit->t > 1.5 * cfg.spawn_r_max) continue;
      scan.points.push_back(origin + hit->t * dir);
      double inten = cfg.intensity_base +
                     cfg.intensity_class_gain * hit->prim->class_id + noise;
      scan.intensity.push_back(std::clamp(inten, 0.0, 1.0));
      scan.labels.push_back(hit->prim->class_id);
    }
  }
  return scan;
}

LabelImage render_label_image(const Scene& scene, const CameraModel& cam) {
  LabelImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.class_id.assign(static_cast<size_t>(cam.width) * cam.height, kIgnore);
  img.instance_id.assign(static_cast<size_t>(cam.width) * cam.height, 0);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      Ray ray = pixel_ray(cam, u, v);
      auto hit = nearest_hit(scene, ray.origin, ray.direction);
      if (!hit) continue;
      img.class_id[v * cam.width + u] = hit->prim->class_id;
      img.instance_id[v * cam.width + u] = hit->prim->instance_id;
    }
  }
  return img;
}

namespace {
constexpr char kScanMagic[4] = {'S', 'R', 'A', 'Y'};
}

void save_scan(const Scan& scan, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write scan: " + path);
  f.write(kScanMagic, 4);
  uint32_t version = 1, n = static_cast<uint32_t>(scan.size()),
           c = static_cast<uint32_t>(scan.classes);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(reinterpret_cast<const char*>(&c), 4);
  for (size_t i = 0; i < scan.size(); ++i) {
    float xyz[3] = {static_cast<float>(scan.points[i].x()),
                    static_cast<float>(scan.points[i].y()),
                    static_cast<float>(scan.points[i].z())};
    float inten = static_cast<float>(scan.intensity[i]);
    uint16_t label = static_cast<uint16_t>(scan.labels[i]);
    f.write(reinterpret_cast<const char*>(xyz), 12);
    f.write(reinterpret_cast<const char*>(&inten), 4);
    f.write(reinterpret_cast<const char*>(&label), 2);
  }
}

Scan load_scan(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read scan: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kScanMagic, 4) != 0)
    throw IoError("bad scan magic: " + path);
  uint32_t version = 0, n = 0, c = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&n), 4);
  f.read(reinterpret_cast<char*>(&c), 4);
  if (version != 1) throw IoError("unsupported scan version");
  Scan scan;
  scan.classes = static_cast<int>(c);
  scan.points.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    float xyz[3], inten;
    uint16_t label;
    f.read(reinterpret_cast<char*>(xyz), 12);
    f.read(reinterpret_cast<char*>(&inten), 4);
    f.read(reinterpret_cast<char*>(&label), 2);
    scan.points.emplace_back(xyz[0], xyz[1], xyz[2]);
    scan.intensity.push_back(inten);
    scan.labels.push_back(label);
  }
  if (!f) throw IoError("truncated scan file: " + path);
  return scan;
}

void save_label_image(const LabelImage& img, const std::string& class_path,
                      const std::string& instance_path) {
  std::vector<uint8_t> cls(img.class_id.size());
  for (size_t i = 0; i < cls.size(); ++i)
    cls[i] = img.class_id[i] == kIgnore
                 ? 255
                 : static_cast<uint8_t>(img.class_id[i]);
  write_pgm8(class_path, img.width, img.height, cls);
  std::vector<uint16_t> inst(img.instance_id.begin(), img.instance_id.end());
  write_pgm16(instance_path, img.width, img.height, inst);
}

LabelImage load_label_image(const std::string& class_path,
                            const std::string& instance_path) {
  LabelImage img;
  auto cls = read_pgm8(class_path, img.width, img.height);
  img.class_id.resize(cls.size());
  for (size_t i = 0; i < cls.size(); ++i)
    img.class_id[i] = cls[i] == 255 ? kIgnore : cls[i];
  int w = 0, h = 0;
  auto inst = read_pgm16(instance_path, w, h);
  if (w != img.width || h != img.height)
    throw IoError("instance map size mismatch: " + instance_path);
  img.instance_id.assign(inst.begin(), inst.end());
  return img;
}

}  // namespace voxray
