#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxray/common.hpp"

namespace voxray {

struct CylGrid;

/// Pinhole camera with a rigid camera->LiDAR transform.
/// Camera frame: +z optical axis, +x right, +y down.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 rotation = Mat3::Identity();  // camera -> LiDAR
  Vec3 translation = Vec3::Zero();   // camera center in the LiDAR frame

  void validate() const;  // throws ConfigError on bad intrinsics/rotation
  Vec3 to_camera(const Vec3& p_lidar) const {
    return rotation.transpose() * (p_lidar - translation);
  }
  Vec3 to_lidar(const Vec3& p_cam) const {
    return rotation * p_cam + translation;
  }
};

struct Ray {
  Vec3 origin;     // LiDAR frame
  Vec3 direction;  // unit length
  int u = 0, v = 0;
};

struct PixelProjection {
  double u, v;   // continuous pixel coordinates
  double depth;  // camera-frame z, > 0
};

/// Projects a LiDAR-frame point. Absent when behind the camera or outside
/// the image.
std::optional<PixelProjection> project_point(const CameraModel& cam,
                                             const Vec3& p);

/// Ray through the center of pixel (u, v), expressed in the LiDAR frame.
/// Throws std::out_of_range for pixels outside the image.
Ray pixel_ray(const CameraModel& cam, int u, int v);

/// Greedy cover: a pixel set such that every occupied voxel whose center
/// lies in the frustum between the near/far planes is traversed by at
/// least one returned pixel's M-sample ray.
std::vector<std::pair<int, int>> min_cover_pixels(const CameraModel& cam,
                                                  const CylGrid& grid,
                                                  double near_plane,
                                                  double far_plane,
                                                  int samples_per_ray = 458);

/// Cells of `grid` occupied and hit by the mid-bin samples of `ray`.
std::vector<int64_t> traversed_cells(const CylGrid& grid, const Ray& ray,
                                     int samples_per_ray, double near_plane,
                                     double far_plane);

/// Occupied cells (linear indices) whose centers lie inside the frustum
/// between the near and far planes and project into the image.
std::vector<int64_t> frustum_visible_cells(const CameraModel& cam,
                                           const CylGrid& grid,
                                           double near_plane,
                                           double far_plane);

CameraModel load_calibration(const std::string& path);
void save_calibration(const CameraModel& cam, const std::string& path);

}  // namespace voxray
