#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "voxray/backbone.hpp"

using namespace voxray;

namespace {

// A small scan with points clustered into a handful of cells.
Scan toy_scan(uint64_t seed, int n = 400) {
  Rng rng(seed);
  Scan scan;
  scan.classes = 4;
  for (int i = 0; i < n; ++i) {
    double r = rng.uniform(1.0, 9.0);
    double th = rng.uniform(0.0, kTwoPi);
    double z = rng.uniform(-1.5, 1.5);
    scan.points.emplace_back(r * std::cos(th), r * std::sin(th), z);
    scan.intensity.push_back(rng.uniform(0.0, 1.0));
    scan.labels.push_back(rng.uniform_int(0, 3));
  }
  return scan;
}

CylGrid toy_grid(const Scan& scan, int feat_dim) {
  CylBounds bounds{0.0, 10.0, -2.0, 2.0};
  return voxelize(scan, 10, 12, 6, bounds, feat_dim);
}

double loss_of(const MiniVoxNet& net, CylGrid& grid, const Scan& scan,
               const MatX& probe) {
  backbone_forward(net, grid, scan);
  return (grid.features.array() * probe.array()).sum();
}

}  // namespace

TEST_CASE("pooled statistics match a direct per-cell computation") {
  Scan scan = toy_scan(1);
  CylGrid grid = toy_grid(scan, 4);
  MatX stats;
  compute_cell_stats(grid, scan, stats);
  REQUIRE(stats.rows() == MiniVoxNet::kStatsDim);
  REQUIRE(stats.cols() == grid.occupied());

  for (int s = 0; s < grid.occupied(); ++s) {
    const auto& idx = grid.unravel(grid.slot_cell[s]);
    Vec3 center = grid.cell_center(idx[0], idx[1], idx[2]);
    const auto& pts = grid.cell_points[s];
    REQUIRE(!pts.empty());
    Vec3 mean = Vec3::Zero();
    double mean_int = 0.0;
    for (int pi : pts) {
      mean += scan.points[pi] - center;
      mean_int += scan.intensity[pi];
    }
    mean /= pts.size();
    mean_int /= pts.size();
    Vec3 var = Vec3::Zero();
    for (int pi : pts) {
      Vec3 d = scan.points[pi] - center - mean;
      var += d.cwiseProduct(d);
    }
    var /= pts.size();
    CHECK((stats.col(s).segment<3>(0) - mean).norm() < 1e-12);
    CHECK((stats.col(s).segment<3>(3) - var).norm() < 1e-12);
    CHECK(stats(6, s) == doctest::Approx(mean_int).epsilon(1e-12));
    CHECK(stats(7, s) ==
          doctest::Approx(std::log(double(pts.size()))).epsilon(1e-12));
  }
}

TEST_CASE("kappa = 0 makes each cell depend only on its own points") {
  Scan scan = toy_scan(2);
  CylGrid grid = toy_grid(scan, 8);
  MiniVoxNet net = MiniVoxNet::init(16, 8, 0.0, 7);
  backbone_forward(net, grid, scan);

  // straight-line reference: feature = W2 relu(W1 stats + b1) + b2
  MatX stats;
  compute_cell_stats(grid, scan, stats);
  for (int s = 0; s < grid.occupied(); ++s) {
    VecX h = (net.W1 * stats.col(s) + net.b1).cwiseMax(0.0);
    VecX f = net.W2 * h + net.b2;
    CHECK((grid.features.col(s) - f).norm() < 1e-12);
  }
}

TEST_CASE("zero weights produce zero features and zero gradients") {
  Scan scan = toy_scan(3);
  CylGrid grid = toy_grid(scan, 6);
  MiniVoxNet net = MiniVoxNet::init(12, 6, 0.3, 1);
  net.W1.setZero();
  net.b1.setZero();
  net.W2.setZero();
  net.b2.setZero();
  BackboneCache cache;
  backbone_forward(net, grid, scan, &cache);
  CHECK(grid.features.norm() == 0.0);

  MatX up = MatX::Zero(6, grid.occupied());
  MiniVoxNetGrads grads;
  grads.init_like(net);
  backbone_backward(net, grid, cache, up, grads);
  CHECK(grads.W1.norm() == 0.0);
  CHECK(grads.W2.norm() == 0.0);
  CHECK(grads.b1.norm() == 0.0);
  CHECK(grads.b2.norm() == 0.0);
}

TEST_CASE("neighbor mixing matches an explicit reference") {
  Scan scan = toy_scan(4);
  CylGrid grid = toy_grid(scan, 8);
  double kappa = 0.4;
  MiniVoxNet net = MiniVoxNet::init(16, 8, kappa, 3);
  BackboneCache cache;
  backbone_forward(net, grid, scan, &cache);

  for (int s = 0; s < grid.occupied(); ++s) {
    auto idx = grid.unravel(grid.slot_cell[s]);
    // collect occupied 6-neighbors with angular wraparound, clamped r/z
    std::vector<int> nbrs;
    const int dirs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                            {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& d : dirs) {
      int ir = idx[0] + d[0], ia = idx[1] + d[1], ih = idx[2] + d[2];
      if (ir < 0 || ir >= grid.res_r || ih < 0 || ih >= grid.res_h) continue;
      ia = (ia + grid.res_a) % grid.res_a;
      int ns = grid.slot_of(grid.linear_index(ir, ia, ih));
      if (ns >= 0) nbrs.push_back(ns);
    }
    VecX expect = (1.0 - kappa) * cache.premix.col(s);
    if (!nbrs.empty()) {
      VecX mean = VecX::Zero(8);
      for (int ns : nbrs) mean += cache.premix.col(ns);
      expect += kappa * mean / nbrs.size();
    }
    CHECK((grid.features.col(s) - expect).norm() < 1e-12);
  }
}

TEST_CASE("weight gradients agree with finite differences") {
  Scan scan = toy_scan(5, 200);
  CylGrid grid = toy_grid(scan, 6);
  MiniVoxNet net = MiniVoxNet::init(10, 6, 0.3, 11);
  Rng rng(99);
  MatX probe(6, grid.occupied());
  for (int j = 0; j < probe.cols(); ++j)
    for (int i = 0; i < probe.rows(); ++i) probe(i, j) = rng.normal(0.0, 1.0);

  BackboneCache cache;
  backbone_forward(net, grid, scan, &cache);
  MiniVoxNetGrads grads;
  grads.init_like(net);
  backbone_backward(net, grid, cache, probe, grads);

  const double eps = 1e-6;
  auto check_fd = [&](double* param, double analytic) {
    double saved = *param;
    *param = saved + eps;
    double lp = loss_of(net, grid, scan, probe);
    *param = saved - eps;
    double lm = loss_of(net, grid, scan, probe);
    *param = saved;
    double fd = (lp - lm) / (2 * eps);
    double denom = std::max({1.0, std::abs(fd), std::abs(analytic)});
    CHECK(std::abs(fd - analytic) / denom < 1e-5);
  };

  for (int k = 0; k < 20; ++k) {
    int i = rng.uniform_int(0, static_cast<int>(net.W1.rows()) - 1);
    int j = rng.uniform_int(0, static_cast<int>(net.W1.cols()) - 1);
    check_fd(&net.W1(i, j), grads.W1(i, j));
  }
  for (int k = 0; k < 20; ++k) {
    int i = rng.uniform_int(0, static_cast<int>(net.W2.rows()) - 1);
    int j = rng.uniform_int(0, static_cast<int>(net.W2.cols()) - 1);
    check_fd(&net.W2(i, j), grads.W2(i, j));
  }
  for (int i = 0; i < net.b1.size(); ++i) check_fd(&net.b1(i), grads.b1(i));
  for (int i = 0; i < net.b2.size(); ++i) check_fd(&net.b2(i), grads.b2(i));
}

TEST_CASE("statistics are invariant to point order within a cell") {
  Scan scan = toy_scan(6);
  CylGrid grid_a = toy_grid(scan, 4);

  Scan reversed;
  reversed.classes = scan.classes;
  for (size_t i = scan.size(); i-- > 0;) {
    reversed.points.push_back(scan.points[i]);
    reversed.intensity.push_back(scan.intensity[i]);
    reversed.labels.push_back(scan.labels[i]);
  }
  CylGrid grid_b = toy_grid(reversed, 4);

  MatX sa, sb;
  compute_cell_stats(grid_a, scan, sa);
  compute_cell_stats(grid_b, reversed, sb);
  REQUIRE(grid_a.occupied() == grid_b.occupied());
  for (int s = 0; s < grid_a.occupied(); ++s) {
    int sb_slot = grid_b.slot_of(grid_a.slot_cell[s]);
    REQUIRE(sb_slot >= 0);
    CHECK((sa.col(s) - sb.col(sb_slot)).norm() < 1e-9);
  }
}

TEST_CASE("backward without a matching cache throws") {
  Scan scan = toy_scan(7);
  CylGrid grid = toy_grid(scan, 4);
  MiniVoxNet net = MiniVoxNet::init(8, 4, 0.3, 2);
  BackboneCache cache;  // never filled
  MiniVoxNetGrads grads;
  grads.init_like(net);
  MatX up = MatX::Zero(4, grid.occupied());
  CHECK_THROWS_AS(backbone_backward(net, grid, cache, up, grads),
                  std::logic_error);
}

TEST_CASE("checkpoint round trip preserves weights exactly") {
  MiniVoxNet net = MiniVoxNet::init(12, 6, 0.25, 5);
  std::string path = "/tmp/voxray_backbone_test.bin";
  save_backbone(net, path);
  MiniVoxNet loaded = load_backbone(path);
  CHECK(loaded.hidden_dim == net.hidden_dim);
  CHECK(loaded.feat_dim == net.feat_dim);
  CHECK(loaded.kappa == net.kappa);
  CHECK((loaded.W1 - net.W1).norm() == 0.0);
  CHECK((loaded.W2 - net.W2).norm() == 0.0);
  CHECK((loaded.b1 - net.b1).norm() == 0.0);
  CHECK((loaded.b2 - net.b2).norm() == 0.0);
  std::remove(path.c_str());
}
