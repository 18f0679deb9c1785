#include "voxray/grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "voxray/scene.hpp"

namespace voxray {

int64_t CylGrid::cell_of(const Vec3& p) const {
  CylCoord c = to_cylindrical(p);
  if (c.r < bounds.r_min || c.r > bounds.r_max) return -1;
  if (c.z < bounds.z_min || c.z > bounds.z_max) return -1;
  int ir = static_cast<int>((c.r - bounds.r_min) / dr());
  int ia = static_cast<int>(c.theta / da());
  int ih = static_cast<int>((c.z - bounds.z_min) / dz());
  // upper-boundary points belong to the last cell
  ir = std::min(ir, res_r - 1);
  ia = std::min(ia, res_a - 1);
  ih = std::min(ih, res_h - 1);
  return linear_index(ir, ia, ih);
}

Vec3 CylGrid::cell_center(int ir, int ia, int ih) const {
  double r = bounds.r_min + (ir + 0.5) * dr();
  double theta = (ia + 0.5) * da();
  double z = bounds.z_min + (ih + 0.5) * dz();
  return {r * std::cos(theta), r * std::sin(theta), z};
}

int CylGrid::ensure_cell(int64_t cell) {
  auto it = cell_slot.find(cell);
  if (it != cell_slot.end()) return it->second;
  int slot = occupied();
  cell_slot.emplace(cell, slot);
  slot_cell.push_back(cell);
  cell_points.emplace_back();
  features.conservativeResize(feat_dim, slot + 1);
  features.col(slot).setZero();
  return slot;
}

CylGrid voxelize(const Scan& scan, int res_r, int res_a, int res_h,
                 const CylBounds& bounds, int feat_dim) {
  CylGrid grid;
  grid.res_r = res_r;
  grid.res_a = res_a;
  grid.res_h = res_h;
  grid.bounds = bounds;
  grid.feat_dim = feat_dim;
  grid.features.resize(feat_dim, 0);
  for (size_t i = 0; i < scan.points.size(); ++i) {
    int64_t cell = grid.cell_of(scan.points[i]);
    if (cell < 0) {
      ++grid.dropped_points;
      continue;
    }
    int slot = grid.ensure_cell(cell);
    grid.cell_points[slot].push_back(static_cast<int>(i));
  }
  return grid;
}

VecX sample_trilinear(const CylGrid& grid, const Vec3& p,
                      TrilinearCache* cache) {
  if (cache) {
    cache->in_bounds = false;
    cache->slots.fill(-1);
    cache->weights.fill(0.0);
  }
  CylCoord c = to_cylindrical(p);
  const auto& b = grid.bounds;
  if (c.r < b.r_min || c.r > b.r_max || c.z < b.z_min || c.z > b.z_max)
    return VecX::Zero(grid.feat_dim);

  // continuous index space with cell centers at integer+0.5
  double cr = (c.r - b.r_min) / grid.dr() - 0.5;
  double ca = c.theta / grid.da() - 0.5;
  double cz = (c.z - b.z_min) / grid.dz() - 0.5;

  int ir0 = static_cast<int>(std::floor(cr));
  int ia0 = static_cast<int>(std::floor(ca));
  int iz0 = static_cast<int>(std::floor(cz));
  double fr = cr - ir0, fa = ca - ia0, fz = cz - iz0;

  VecX out = VecX::Zero(grid.feat_dim);
  int corner = 0;
  for (int drr = 0; drr < 2; ++drr) {
    for (int daa = 0; daa < 2; ++daa) {
      for (int dzz = 0; dzz < 2; ++dzz, ++corner) {
        double w = (drr ? fr : 1 - fr) * (daa ? fa : 1 - fa) *
                   (dzz ? fz : 1 - fz);
        int ir = ir0 + drr;
        int ia = ia0 + daa;
        int iz = iz0 + dzz;
        // angular wraparound; radial/height corners outside the grid are
        // treated as empty space
        ia = ((ia % grid.res_a) + grid.res_a) % grid.res_a;
        if (cache) cache->weights[corner] = w;
        if (ir < 0 || ir >= grid.res_r || iz < 0 || iz >= grid.res_h)
          continue;
        int slot = grid.slot_of(grid.linear_index(ir, ia, iz));
        if (cache) cache->slots[corner] = slot;
        if (slot >= 0) out += w * grid.features.col(slot);
      }
    }
  }
  if (cache) cache->in_bounds = true;
  return out;
}

void sample_trilinear_backward(const TrilinearCache& cache,
                               const VecX& upstream, MatX& feat_grads) {
  if (!cache.in_bounds) return;
  for (int corner = 0; corner < 8; ++corner) {
    int slot = cache.slots[corner];
    if (slot < 0) continue;
    feat_grads.col(slot) += cache.weights[corner] * upstream;
  }
}

namespace {
constexpr char kGridMagic[4] = {'C', 'G', 'R', 'D'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_grid(const CylGrid& grid, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write grid: " + path);
  f.write(kGridMagic, 4);
  put<uint32_t>(f, 1);
  put<uint32_t>(f, static_cast<uint32_t>(grid.res_r));
  put<uint32_t>(f, static_cast<uint32_t>(grid.res_a));
  put<uint32_t>(f, static_cast<uint32_t>(grid.res_h));
  put<double>(f, grid.bounds.r_min);
  put<double>(f, grid.bounds.r_max);
  put<double>(f, grid.bounds.z_min);
  put<double>(f, grid.bounds.z_max);
  put<uint32_t>(f, static_cast<uint32_t>(grid.feat_dim));
  put<uint32_t>(f, static_cast<uint32_t>(grid.occupied()));
  // canonical order: sorted by cell index, byte-comparable checkpoints
  std::vector<int64_t> cells = grid.slot_cell;
  std::sort(cells.begin(), cells.end());
  for (int64_t cell : cells) {
    put<int64_t>(f, cell);
    int slot = grid.slot_of(cell);
    for (int i = 0; i < grid.feat_dim; ++i)
      put<float>(f, static_cast<float>(grid.features(i, slot)));
  }
}

CylGrid load_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read grid: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kGridMagic, 4) != 0)
    throw IoError("bad grid file magic: " + path);
  if (get<uint32_t>(f) != 1) throw IoError("unsupported grid version");
  CylGrid grid;
  grid.res_r = static_cast<int>(get<uint32_t>(f));
  grid.res_a = static_cast<int>(get<uint32_t>(f));
  grid.res_h = static_cast<int>(get<uint32_t>(f));
  grid.bounds.r_min = get<double>(f);
  grid.bounds.r_max = get<double>(f);
  grid.bounds.z_min = get<double>(f);
  grid.bounds.z_max = get<double>(f);
  grid.feat_dim = static_cast<int>(get<uint32_t>(f));
  uint32_t n = get<uint32_t>(f);
  grid.features.resize(grid.feat_dim, 0);
  for (uint32_t k = 0; k < n; ++k) {
    int64_t cell = get<int64_t>(f);
    int slot = grid.ensure_cell(cell);
    for (int i = 0; i < grid.feat_dim; ++i)
      grid.features(i, slot) = get<float>(f);
  }
  if (!f) throw IoError("truncated grid file: " + path);
  return grid;
}

}  // namespace voxray
