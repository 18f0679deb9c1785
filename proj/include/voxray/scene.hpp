#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxray/common.hpp"
#include "voxray/geom.hpp"

namespace voxray {

/// Analytic primitives: horizontal ground plane, axis-aligned box,
/// vertical cylinder (pole). Exact ray intersections for all three.
struct Primitive {
  enum class Kind { GroundPlane, Box, Pole };
  Kind kind = Kind::Box;
  int class_id = 0;
  int instance_id = 0;

  double plane_z = 0.0;            // GroundPlane
  Vec3 box_min, box_max;           // Box
  double pole_x = 0, pole_y = 0;   // Pole axis
  double pole_radius = 0.3;
  double pole_z0 = 0, pole_z1 = 0;
};

/// Nearest hit distance along a unit ray, if any.
std::optional<double> intersect(const Primitive& prim, const Vec3& origin,
                                const Vec3& dir);

struct SceneConfig {
  int classes = 6;           // class 0 is ground
  int min_objects = 2, max_objects = 5;
  double ground_z = -1.5;    // sensor sits at the LiDAR origin
  double spawn_r_min = 4.0, spawn_r_max = 22.0;   // object placement band
  double spawn_half_angle = 0.85;                 // radians around +x
  double box_size_min = 0.8, box_size_max = 3.0;
  double pole_radius_min = 0.15, pole_radius_max = 0.5;
  double pole_height_min = 2.0, pole_height_max = 3.0;
  double camera_offset_x = 0.0, camera_offset_y = 0.0, camera_offset_z = 0.0;
  // Camera intrinsics
  int image_width = 96, image_height = 64;
  double focal = 70.0;
  // LiDAR pattern
  int azimuth_steps = 180;   // full circle
  int elevation_steps = 32;
  double elev_min = -0.42, elev_max = 0.46;  // radians, spans the camera FOV
  // Intensity model: base + class_gain * class_id + noise
  double intensity_base = 0.15;
  double intensity_class_gain = 0.11;
  double intensity_noise = 0.10;

  void validate() const;  // throws ConfigError
};

SceneConfig load_scene_config(const std::string& path);

struct Scene {
  SceneConfig config;
  uint64_t seed = 0;
  std::vector<Primitive> objects;  // objects[0] is the ground plane
  Vec3 camera_offset = Vec3::Zero();

  CameraModel camera() const;
};

struct Scan {
  std::vector<Vec3> points;       // LiDAR frame, meters
  std::vector<double> intensity;  // [0, 1]
  std::vector<int> labels;        // class id or kIgnore
  int classes = 0;

  size_t size() const { return points.size(); }
};

struct LabelImage {
  int width = 0, height = 0;
  std::vector<int> class_id;     // kIgnore where no hit
  std::vector<int> instance_id;  // 0 = background / no hit

  int at_class(int u, int v) const { return class_id[v * width + u]; }
  int at_instance(int u, int v) const { return instance_id[v * width + u]; }
};

Scene generate_scene(const SceneConfig& config, uint64_t seed);
Scan simulate_lidar(const Scene& scene);
LabelImage render_label_image(const Scene& scene, const CameraModel& cam);

// Scan file: "SRAY" magic, u32 version, u32 N, u32 C, then N records of
// (f32 x, y, z, f32 intensity, u16 label), little endian.
void save_scan(const Scan& scan, const std::string& path);
Scan load_scan(const std::string& path);

void save_label_image(const LabelImage& img, const std::string& class_path,
                      const std::string& instance_path);
LabelImage load_label_image(const std::string& class_path,
                            const std::string& instance_path);

}  // namespace voxray
