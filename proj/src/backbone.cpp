#include "voxray/backbone.hpp"

#include <cmath>
#include <fstream>

namespace voxray {

MiniVoxNet MiniVoxNet::init(int hidden_dim, int feat_dim, double kappa,
                            uint64_t seed) {
  MiniVoxNet net;
  net.hidden_dim = hidden_dim;
  net.feat_dim = feat_dim;
  net.kappa = kappa;
  Rng rng(seed);
  auto fill = [&](MatX& m, int rows, int cols) {
    m.resize(rows, cols);
    double scale = std::sqrt(2.0 / cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, scale);
  };
  fill(net.W1, hidden_dim, kStatsDim);
  net.b1 = VecX::Zero(hidden_dim);
  fill(net.W2, feat_dim, hidden_dim);
  net.b2 = VecX::Zero(feat_dim);
  return net;
}

void MiniVoxNetGrads::init_like(const MiniVoxNet& net) {
  W1 = MatX::Zero(net.W1.rows(), net.W1.cols());
  b1 = VecX::Zero(net.b1.size());
  W2 = MatX::Zero(net.W2.rows(), net.W2.cols());
  b2 = VecX::Zero(net.b2.size());
}

void MiniVoxNetGrads::zero() {
  W1.setZero();
  b1.setZero();
  W2.setZero();
  b2.setZero();
}

void compute_cell_stats(const CylGrid& grid, const Scan& scan, MatX& stats) {
  int n = grid.occupied();
  stats.resize(MiniVoxNet::kStatsDim, n);
  stats.setZero();
  for (int slot = 0; slot < n; ++slot) {
    const auto& pts = grid.cell_points[slot];
    if (pts.empty()) continue;  // cells from checkpoints carry no points
    auto [ir, ia, ih] = grid.unravel(grid.slot_cell[slot]);
    Vec3 center = grid.cell_center(ir, ia, ih);
    Vec3 mean = Vec3::Zero();
    double mean_inten = 0.0;
    for (int i : pts) {
      mean += scan.points[i] - center;
      mean_inten += scan.intensity[i];
    }
    double inv_n = 1.0 / static_cast<double>(pts.size());
    mean *= inv_n;
    mean_inten *= inv_n;
    Vec3 var = Vec3::Zero();
    for (int i : pts) {
      Vec3 d = scan.points[i] - center - mean;
      var += d.cwiseProduct(d);
    }
    var *= inv_n;
    stats.block<3, 1>(0, slot) = mean;
    stats.block<3, 1>(3, slot) = var;
    stats(6, slot) = mean_inten;
    stats(7, slot) = std::log(static_cast<double>(pts.size()));
  }
}

namespace {

std::vector<std::vector<int>> occupied_neighbors(const CylGrid& grid) {
  std::vector<std::vector<int>> nbrs(grid.occupied());
  for (int slot = 0; slot < grid.occupied(); ++slot) {
    auto [ir, ia, ih] = grid.unravel(grid.slot_cell[slot]);
    const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                         {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& dd : d) {
      int nr = ir + dd[0];
      int na = (ia + dd[1] + grid.res_a) % grid.res_a;  // angular wrap
      int nh = ih + dd[2];
      if (nr < 0 || nr >= grid.res_r || nh < 0 || nh >= grid.res_h) continue;
      int ns = grid.slot_of(grid.linear_index(nr, na, nh));
      if (ns >= 0) nbrs[slot].push_back(ns);
    }
  }
  return nbrs;
}

}  // namespace

void backbone_forward(const MiniVoxNet& net, CylGrid& grid, const Scan& scan,
                      BackboneCache* cache) {
  BackboneCache local;
  BackboneCache& c = cache ? *cache : local;
  compute_cell_stats(grid, scan, c.stats);
  int n = grid.occupied();
  c.hidden = ((net.W1 * c.stats).colwise() + net.b1).cwiseMax(0.0);
  c.premix = (net.W2 * c.hidden).colwise() + net.b2;
  c.neighbors = occupied_neighbors(grid);

  grid.features.resize(net.feat_dim, n);
  for (int slot = 0; slot < n; ++slot) {
    VecX mixed = VecX::Zero(net.feat_dim);
    const auto& nb = c.neighbors[slot];
    if (!nb.empty()) {
      for (int ns : nb) mixed += c.premix.col(ns);
      mixed /= static_cast<double>(nb.size());
    }
    grid.features.col(slot) =
        (1.0 - net.kappa) * c.premix.col(slot) + net.kappa * mixed;
  }
}

void backbone_backward(const MiniVoxNet& net, const CylGrid& grid,
                       const BackboneCache& cache, const MatX& feat_grads,
                       MiniVoxNetGrads& grads) {
  int n = grid.occupied();
  if (cache.stats.cols() != n)
    throw std::logic_error("backbone backward: stale forward cache");

  // d(loss)/d(premix): own contribution plus shares of neighbors' mixes
  MatX dpremix = (1.0 - net.kappa) * feat_grads;
  for (int slot = 0; slot < n; ++slot) {
    const auto& nb = cache.neighbors[slot];
    if (nb.empty()) continue;
    double w = net.kappa / static_cast<double>(nb.size());
    for (int ns : nb) dpremix.col(ns) += w * feat_grads.col(slot);
  }

  grads.W2 += dpremix * cache.hidden.transpose();
  grads.b2 += dpremix.rowwise().sum();
  MatX dhidden = net.W2.transpose() * dpremix;
  dhidden = (cache.hidden.array() > 0.0).select(dhidden, 0.0);
  grads.W1 += dhidden * cache.stats.transpose();
  grads.b1 += dhidden.rowwise().sum();
}

namespace {
constexpr char kNetMagic[4] = {'M', 'V', 'N', '1'};

void write_mat(std::ostream& f, const MatX& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      f.write(reinterpret_cast<const char*>(&v), 8);
    }
}
void read_mat(std::istream& f, MatX& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      double v;
      f.read(reinterpret_cast<char*>(&v), 8);
      m(r, c) = v;
    }
}
void write_vec(std::ostream& f, const VecX& v) {
  for (int i = 0; i < v.size(); ++i) {
    double x = v(i);
    f.write(reinterpret_cast<const char*>(&x), 8);
  }
}
void read_vec(std::istream& f, VecX& v) {
  for (int i = 0; i < v.size(); ++i) {
    double x;
    f.read(reinterpret_cast<char*>(&x), 8);
    v(i) = x;
  }
}
}  // namespace

void save_backbone(const MiniVoxNet& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write backbone: " + path);
  f.write(kNetMagic, 4);
  int32_t dims[2] = {net.hidden_dim, net.feat_dim};
  f.write(reinterpret_cast<const char*>(dims), 8);
  f.write(reinterpret_cast<const char*>(&net.kappa), 8);
  write_mat(f, net.W1);
  write_vec(f, net.b1);
  write_mat(f, net.W2);
  write_vec(f, net.b2);
}

MiniVoxNet load_backbone(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read backbone: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::string(magic, 4) != std::string(kNetMagic, 4))
    throw IoError("bad backbone checkpoint: " + path);
  int32_t dims[2];
  f.read(reinterpret_cast<char*>(dims), 8);
  MiniVoxNet net;
  net.hidden_dim = dims[0];
  net.feat_dim = dims[1];
  f.read(reinterpret_cast<char*>(&net.kappa), 8);
  net.W1.resize(net.hidden_dim, MiniVoxNet::kStatsDim);
  net.b1.resize(net.hidden_dim);
  net.W2.resize(net.feat_dim, net.hidden_dim);
  net.b2.resize(net.feat_dim);
  read_mat(f, net.W1);
  read_vec(f, net.b1);
  read_mat(f, net.W2);
  read_vec(f, net.b2);
  if (!f) throw IoError("truncated backbone checkpoint: " + path);
  return net;
}

}  // namespace voxray
