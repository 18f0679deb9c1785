#include "voxray/geom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "voxray/grid.hpp"
#include "voxray/io.hpp"

namespace voxray {

void CameraModel::validate() const {
  if (fx <= 0 || fy <= 0) throw ConfigError("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("bad image dimensions");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw ConfigError("camera rotation determinant != 1");
  if (((rotation.transpose() * rotation) - Mat3::Identity()).norm() > 1e-9)
    throw ConfigError("camera rotation not orthonormal");
}

std::optional<PixelProjection> project_point(const CameraModel& cam,
                                             const Vec3& p) {
  Vec3 pc = cam.to_camera(p);
  if (pc.z() <= 0) return std::nullopt;
  double u = cam.cx + cam.fx * pc.x() / pc.z();
  double v = cam.cy + cam.fy * pc.y() / pc.z();
  if (u < 0 || u >= cam.width || v < 0 || v >= cam.height) return std::nullopt;
  return PixelProjection{u, v, pc.z()};
}

Ray pixel_ray(const CameraModel& cam, int u, int v) {
  if (u < 0 || u >= cam.width || v < 0 || v >= cam.height)
    throw std::out_of_range("pixel outside image");
  Vec3 dir_cam((u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0);
  Vec3 dir = cam.rotation * dir_cam;
  dir.normalize();
  return Ray{cam.translation, dir, u, v};
}

std::vector<int64_t> traversed_cells(const CylGrid& grid, const Ray& ray,
                                     int samples_per_ray, double near_plane,
                                     double far_plane) {
  std::vector<int64_t> cells;
  double delta = (far_plane - near_plane) / samples_per_ray;
  int64_t prev = -2;
  for (int k = 0; k < samples_per_ray; ++k) {
    double t = near_plane + (k + 0.5) * delta;
    int64_t cell = grid.cell_of(ray.origin + t * ray.direction);
    if (cell < 0 || cell == prev) {
      prev = cell;
      continue;
    }
    prev = cell;
    if (grid.cell_slot.count(cell)) cells.push_back(cell);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

std::vector<int64_t> frustum_visible_cells(const CameraModel& cam,
                                           const CylGrid& grid,
                                           double near_plane,
                                           double far_plane) {
  std::vector<int64_t> out;
  for (int64_t cell : grid.slot_cell) {
    auto [ir, ia, ih] = grid.unravel(cell);
    Vec3 center = grid.cell_center(ir, ia, ih);
    auto proj = project_point(cam, center);
    if (!proj) continue;
    // range along the ray, matching what traversal samples can reach
    double dist = (center - cam.translation).norm();
    if (dist < near_plane || dist > far_plane) continue;
    out.push_back(cell);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<int, int>> min_cover_pixels(const CameraModel& cam,
                                                  const CylGrid& grid,
                                                  double near_plane,
                                                  double far_plane,
                                                  int samples_per_ray) {
  if (!(near_plane < far_plane)) throw ConfigError("near must be < far");

  struct Visible {
    int64_t cell;
    double depth;
    int u, v;
  };
  std::vector<Visible> visible;
  for (int64_t cell : grid.slot_cell) {
    auto [ir, ia, ih] = grid.unravel(cell);
    Vec3 center = grid.cell_center(ir, ia, ih);
    auto proj = project_point(cam, center);
    if (!proj) continue;
    double dist = (center - cam.translation).norm();
    if (dist < near_plane || dist > far_plane) continue;
    visible.push_back({cell, dist, static_cast<int>(proj->u),
                       static_cast<int>(proj->v)});
  }
  // Far-to-near: far voxels are covered "for free" by rays emitted for
  // near ones less often, so resolve them first.
  std::sort(visible.begin(), visible.end(), [](const auto& a, const auto& b) {
    return a.depth != b.depth ? a.depth > b.depth : a.cell < b.cell;
  });

  std::unordered_set<int64_t> covered;
  std::set<std::pair<int, int>> emitted;
  std::vector<std::pair<int, int>> result;

  auto emit = [&](int u, int v) {
    if (emitted.count({u, v})) return;
    emitted.insert({u, v});
    result.push_back({u, v});
    for (int64_t c : traversed_cells(grid, pixel_ray(cam, u, v),
                                     samples_per_ray, near_plane, far_plane))
      covered.insert(c);
  };

  for (const auto& vis : visible) {
    if (covered.count(vis.cell)) continue;
    emit(vis.u, vis.v);
    if (covered.count(vis.cell)) continue;
    // Mid-bin sampling can slip past a voxel whose center sits near a
    // pixel edge; probe every pixel the cell's corners project into
    // (padded by one) before giving up.
    auto [ir, ia, ih] = grid.unravel(vis.cell);
    // seed the box with the (known in-image) center projection; corners
    // projecting outside the image simply don't extend it
    double u_min = vis.u, u_max = vis.u, v_min = vis.v, v_max = vis.v;
    for (int cr = 0; cr <= 1; ++cr)
      for (int ca = 0; ca <= 1; ++ca)
        for (int ch = 0; ch <= 1; ++ch) {
          double r = grid.bounds.r_min + (ir + cr) * grid.dr();
          double th = (ia + ca) * grid.da();
          double z = grid.bounds.z_min + (ih + ch) * grid.dz();
          Vec3 corner(r * std::cos(th), r * std::sin(th), z);
          auto cp = project_point(cam, corner);
          if (!cp) continue;
          u_min = std::min(u_min, cp->u);
          u_max = std::max(u_max, cp->u);
          v_min = std::min(v_min, cp->v);
          v_max = std::max(v_max, cp->v);
        }
    int u0 = std::max(0, static_cast<int>(std::floor(u_min)) - 1);
    int u1 = std::min(cam.width - 1, static_cast<int>(std::ceil(u_max)) + 1);
    int v0 = std::max(0, static_cast<int>(std::floor(v_min)) - 1);
    int v1 = std::min(cam.height - 1, static_cast<int>(std::ceil(v_max)) + 1);
    for (int v = v0; v <= v1 && !covered.count(vis.cell); ++v)
      for (int u = u0; u <= u1 && !covered.count(vis.cell); ++u)
        emit(u, v);
  }
  return result;
}

CameraModel load_calibration(const std::string& path) {
  static const std::set<std::string> keys = {
      "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"};
  auto kv = parse_kv_file(path, keys);
  CameraModel cam;
  cam.fx = kv_double(kv, "fx", 0);
  cam.fy = kv_double(kv, "fy", 0);
  cam.cx = kv_double(kv, "cx", 0);
  cam.cy = kv_double(kv, "cy", 0);
  cam.width = kv_int(kv, "width", 0);
  cam.height = kv_int(kv, "height", 0);
  {
    std::istringstream rs(kv_string(kv, "rotation", ""));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (!(rs >> cam.rotation(r, c)))
          throw ConfigError("calibration: expected 9 rotation entries");
  }
  {
    std::istringstream ts(kv_string(kv, "translation", ""));
    for (int i = 0; i < 3; ++i)
      if (!(ts >> cam.translation(i)))
        throw ConfigError("calibration: expected 3 translation entries");
  }
  cam.validate();
  return cam;
}

void save_calibration(const CameraModel& cam, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write calibration: " + path);
  f.precision(17);
  f << "fx = " << cam.fx << "\nfy = " << cam.fy << "\ncx = " << cam.cx
    << "\ncy = " << cam.cy << "\nwidth = " << cam.width
    << "\nheight = " << cam.height << "\nrotation =";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f << " " << cam.rotation(r, c);
  f << "\ntranslation = " << cam.translation.x() << " " << cam.translation.y()
    << " " << cam.translation.z() << "\n";
}

}  // namespace voxray
