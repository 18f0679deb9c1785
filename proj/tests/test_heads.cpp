#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "voxray/heads.hpp"

using namespace voxray;

namespace {

Scan cell_scan() {
  Scan scan;
  scan.classes = 3;
  Rng rng(17);
  for (int i = 0; i < 120; ++i) {
    double r = rng.uniform(0.5, 7.5);
    double th = rng.uniform(0.0, kTwoPi);
    scan.points.emplace_back(r * std::cos(th), r * std::sin(th),
                             rng.uniform(-1.0, 1.0));
    scan.intensity.push_back(0.5);
    scan.labels.push_back(rng.uniform_int(0, 2));
  }
  return scan;
}

}  // namespace

TEST_CASE("truncated exponential and its one-sided gradient") {
  CHECK(trunc_exp(0.0) == 1.0);
  CHECK(trunc_exp(2.0) == doctest::Approx(std::exp(2.0)).epsilon(1e-15));
  CHECK(trunc_exp(20.0) == doctest::Approx(std::exp(15.0)).epsilon(1e-15));
  CHECK(trunc_exp(1e6) == doctest::Approx(std::exp(15.0)).epsilon(1e-15));

  CHECK(trunc_exp_grad(2.0) == doctest::Approx(std::exp(2.0)).epsilon(1e-15));
  CHECK(trunc_exp_grad(14.999) ==
        doctest::Approx(std::exp(14.999)).epsilon(1e-12));
  CHECK(trunc_exp_grad(15.0) == 0.0);
  CHECK(trunc_exp_grad(20.0) == 0.0);
}

TEST_CASE("zero-weight ray head yields zero logits and unit density") {
  NerfHead head = NerfHead::init(8, 4, 16, 1);
  head.W1.setZero();
  head.b1.setZero();
  head.W2.setZero();
  head.b2.setZero();
  VecX feat = VecX::Ones(8);
  NerfOutput out = nerf_head_forward(head, feat);
  CHECK(out.logits.norm() == 0.0);
  CHECK(out.density == 1.0);  // exp(0)

  // a large raw-density bias saturates at the clamp
  head.b2(4) = 20.0;
  out = nerf_head_forward(head, feat);
  CHECK(out.density == doctest::Approx(std::exp(15.0)).epsilon(1e-15));
  CHECK(out.density > 0.0);
}

TEST_CASE("ray head matches a straight-line reference") {
  NerfHead head = NerfHead::init(6, 3, 10, 5);
  Rng rng(2);
  VecX feat(6);
  for (int i = 0; i < 6; ++i) feat(i) = rng.normal(0.0, 1.0);
  NerfOutput out = nerf_head_forward(head, feat);
  VecX h = (head.W1 * feat + head.b1).cwiseMax(0.0);
  VecX raw = head.W2 * h + head.b2;
  CHECK((out.logits - raw.head(3)).norm() < 1e-12);
  CHECK(out.density == doctest::Approx(trunc_exp(raw(3))).epsilon(1e-15));
}

TEST_CASE("ray head gradients agree with finite differences") {
  NerfHead head = NerfHead::init(6, 3, 10, 9);
  Rng rng(4);
  VecX feat(6);
  for (int i = 0; i < 6; ++i) feat(i) = rng.normal(0.0, 1.0);
  VecX dlogits(3);
  for (int i = 0; i < 3; ++i) dlogits(i) = rng.normal(0.0, 1.0);
  double ddensity = rng.normal(0.0, 1.0);

  auto loss = [&]() {
    NerfOutput out = nerf_head_forward(head, feat);
    return dlogits.dot(out.logits) + ddensity * out.density;
  };

  NerfSampleCache cache;
  nerf_head_forward(head, feat, &cache);
  NerfHeadGrads grads;
  grads.init_like(head);
  VecX dfeat = nerf_head_backward(head, cache, dlogits, ddensity, grads);

  const double eps = 1e-6;
  auto fd = [&](double* p) {
    double saved = *p;
    *p = saved + eps;
    double lp = loss();
    *p = saved - eps;
    double lm = loss();
    *p = saved;
    return (lp - lm) / (2 * eps);
  };
  auto close = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}) < 1e-5;
  };

  for (int i = 0; i < 6; ++i) CHECK(close(fd(&feat(i)), dfeat(i)));
  for (int k = 0; k < 25; ++k) {
    Rng pick(100 + k);
    int i = pick.uniform_int(0, static_cast<int>(head.W1.rows()) - 1);
    int j = pick.uniform_int(0, static_cast<int>(head.W1.cols()) - 1);
    CHECK(close(fd(&head.W1(i, j)), grads.W1(i, j)));
    int i2 = pick.uniform_int(0, static_cast<int>(head.W2.rows()) - 1);
    int j2 = pick.uniform_int(0, static_cast<int>(head.W2.cols()) - 1);
    CHECK(close(fd(&head.W2(i2, j2)), grads.W2(i2, j2)));
  }
  for (int i = 0; i < head.b1.size(); ++i)
    CHECK(close(fd(&head.b1(i)), grads.b1(i)));
  for (int i = 0; i < head.b2.size(); ++i)
    CHECK(close(fd(&head.b2(i)), grads.b2(i)));
}

TEST_CASE("density gradient vanishes past the clamp") {
  NerfHead head = NerfHead::init(4, 2, 8, 3);
  head.W1.setZero();
  head.b1.setOnes();
  head.W2.setZero();
  head.b2.setZero();
  head.b2(2) = 16.0;  // raw density beyond the clamp
  VecX feat = VecX::Zero(4);
  NerfSampleCache cache;
  nerf_head_forward(head, feat, &cache);
  NerfHeadGrads grads;
  grads.init_like(head);
  nerf_head_backward(head, cache, VecX::Zero(2), 1.0, grads);
  CHECK(grads.b2(2) == 0.0);  // clamped: density insensitive to raw input
}

TEST_CASE("voxel head logits and point predictions") {
  Scan scan = cell_scan();
  CylGrid grid = voxelize(scan, 8, 8, 4, {0.0, 8.0, -1.5, 1.5}, 3);
  // identity-like features: feature of each cell = its slot one-hot pattern
  grid.features.setZero();
  for (int s = 0; s < grid.occupied(); ++s)
    grid.features(s % 3, s) = 1.0;

  VoxHead head = VoxHead::init(3, 3, 1);
  head.W = MatX::Identity(3, 3);
  head.b = VecX::Zero(3);
  MatX logits = vox_head_forward(head, grid);
  REQUIRE(logits.cols() == grid.occupied());
  for (int s = 0; s < grid.occupied(); ++s) {
    VecX expect = VecX::Zero(3);
    expect(s % 3) = 1.0;
    CHECK((logits.col(s) - expect).norm() == 0.0);
  }

  // every point in the same cell receives the cell's argmax
  std::vector<int> slots = point_slots(grid, scan);
  std::vector<int> preds = vox_head_point_predictions(head, grid, scan);
  REQUIRE(preds.size() == scan.size());
  for (size_t i = 0; i < scan.size(); ++i) {
    REQUIRE(slots[i] >= 0);
    CHECK(preds[i] == slots[i] % 3);
  }

  // out-of-bounds point gets the ignore sentinel
  Scan far = scan;
  far.points.push_back(Vec3(100.0, 0.0, 0.0));
  far.intensity.push_back(0.5);
  far.labels.push_back(0);
  std::vector<int> far_preds = vox_head_point_predictions(head, grid, far);
  CHECK(far_preds.back() == kIgnore);
}

TEST_CASE("voxel head gradients agree with finite differences") {
  Scan scan = cell_scan();
  CylGrid grid = voxelize(scan, 6, 6, 3, {0.0, 8.0, -1.5, 1.5}, 4);
  Rng rng(8);
  for (int c = 0; c < grid.features.cols(); ++c)
    for (int r = 0; r < grid.features.rows(); ++r)
      grid.features(r, c) = rng.normal(0.0, 1.0);
  VoxHead head = VoxHead::init(4, 3, 6);
  MatX probe(3, grid.occupied());
  for (int c = 0; c < probe.cols(); ++c)
    for (int r = 0; r < probe.rows(); ++r) probe(r, c) = rng.normal(0.0, 1.0);

  auto loss = [&]() {
    return (vox_head_forward(head, grid).array() * probe.array()).sum();
  };
  VoxHeadGrads grads;
  grads.init_like(head);
  MatX feat_grads = MatX::Zero(4, grid.occupied());
  vox_head_backward(head, grid, probe, grads, feat_grads);

  const double eps = 1e-6;
  auto fd = [&](double* p) {
    double saved = *p;
    *p = saved + eps;
    double lp = loss();
    *p = saved - eps;
    double lm = loss();
    *p = saved;
    return (lp - lm) / (2 * eps);
  };
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(std::abs(fd(&head.W(i, j)) - grads.W(i, j)) < 1e-6);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(fd(&head.b(i)) - grads.b(i)) < 1e-6);
  for (int s = 0; s < std::min(5, grid.occupied()); ++s)
    for (int r = 0; r < 4; ++r)
      CHECK(std::abs(fd(&grid.features(r, s)) - feat_grads(r, s)) < 1e-6);
}

TEST_CASE("head checkpoints round trip exactly") {
  NerfHead nh = NerfHead::init(8, 4, 12, 2);
  save_nerf_head(nh, "/tmp/voxray_nrf_test.bin");
  NerfHead nl = load_nerf_head("/tmp/voxray_nrf_test.bin");
  CHECK(nl.classes == nh.classes);
  CHECK((nl.W1 - nh.W1).norm() == 0.0);
  CHECK((nl.W2 - nh.W2).norm() == 0.0);
  CHECK((nl.b1 - nh.b1).norm() == 0.0);
  CHECK((nl.b2 - nh.b2).norm() == 0.0);
  std::remove("/tmp/voxray_nrf_test.bin");

  VoxHead vh = VoxHead::init(8, 4, 3);
  save_vox_head(vh, "/tmp/voxray_vox_test.bin");
  VoxHead vl = load_vox_head("/tmp/voxray_vox_test.bin");
  CHECK((vl.W - vh.W).norm() == 0.0);
  CHECK((vl.b - vh.b).norm() == 0.0);
  std::remove("/tmp/voxray_vox_test.bin");
}
