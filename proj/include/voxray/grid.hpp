#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxray/common.hpp"

namespace voxray {

struct Scan;

struct CylBounds {
  double r_min = 0.0, r_max = 50.0;
  double z_min = -4.0, z_max = 4.0;
};

struct CylCoord {
  double r, theta, z;  // theta in [0, 2*pi)
};

inline CylCoord to_cylindrical(const Vec3& p) {
  double theta = std::atan2(p.y(), p.x());
  if (theta < 0) theta += kTwoPi;
  return {std::hypot(p.x(), p.y()), theta, p.z()};
}

/// Sparse cylindrical voxel grid. Features exist only for occupied cells;
/// everywhere else the field is the zero vector.
struct CylGrid {
  int res_r = 240, res_a = 180, res_h = 20;
  CylBounds bounds;
  int feat_dim = 16;

  std::unordered_map<int64_t, int> cell_slot;  // linear cell index -> slot
  std::vector<int64_t> slot_cell;              // slot -> linear cell index
  MatX features;                               // feat_dim x occupied()
  std::vector<std::vector<int>> cell_points;   // slot -> point indices
  int dropped_points = 0;

  int occupied() const { return static_cast<int>(slot_cell.size()); }

  int64_t linear_index(int ir, int ia, int ih) const {
    return (static_cast<int64_t>(ir) * res_a + ia) * res_h + ih;
  }
  std::array<int, 3> unravel(int64_t idx) const {
    int ih = static_cast<int>(idx % res_h);
    int64_t rest = idx / res_h;
    return {static_cast<int>(rest / res_a), static_cast<int>(rest % res_a), ih};
  }

  double dr() const { return (bounds.r_max - bounds.r_min) / res_r; }
  double da() const { return kTwoPi / res_a; }
  double dz() const { return (bounds.z_max - bounds.z_min) / res_h; }

  /// Cell of a point, or -1 when out of bounds.
  int64_t cell_of(const Vec3& p) const;
  Vec3 cell_center(int ir, int ia, int ih) const;

  int slot_of(int64_t cell) const {
    auto it = cell_slot.find(cell);
    return it == cell_slot.end() ? -1 : it->second;
  }
  /// Inserts an empty occupied cell if absent; returns its slot.
  int ensure_cell(int64_t cell);
};

/// Bins scan points into cells. Out-of-bounds points are dropped and
/// counted in `dropped_points`. Features are allocated zero-initialized.
CylGrid voxelize(const Scan& scan, int res_r, int res_a, int res_h,
                 const CylBounds& bounds, int feat_dim);

/// Corner bookkeeping for one trilinear query, reused by the backward pass.
struct TrilinearCache {
  std::array<int, 8> slots;     // -1 for unoccupied corners
  std::array<double, 8> weights;
  bool in_bounds = false;
};

/// Interpolates the feature field at p (continuous cylindrical index
/// space, angular wraparound). Out of bounds yields the zero vector.
VecX sample_trilinear(const CylGrid& grid, const Vec3& p,
                      TrilinearCache* cache = nullptr);

/// Accumulates d(loss)/d(corner features) into `feat_grads`
/// (same shape as grid.features).
void sample_trilinear_backward(const TrilinearCache& cache,
                               const VecX& upstream, MatX& feat_grads);

void save_grid(const CylGrid& grid, const std::string& path);
CylGrid load_grid(const std::string& path);

}  // namespace voxray
