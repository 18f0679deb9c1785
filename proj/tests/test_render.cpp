#include <doctest.h>

#include <cmath>

#include "voxray/render.hpp"
#include "voxray/scene.hpp"

using namespace voxray;

namespace {

CameraModel test_camera(int w = 16, int h = 12) {
  CameraModel cam;
  cam.fx = cam.fy = 20.0;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  cam.rotation.col(0) = Vec3(0, -1, 0);
  cam.rotation.col(1) = Vec3(0, 0, -1);
  cam.rotation.col(2) = Vec3(1, 0, 0);
  return cam;
}

CylGrid random_grid(Rng& rng, int feat_dim) {
  Scan scan;
  scan.classes = 4;
  for (int i = 0; i < 300; ++i) {
    double r = rng.uniform(1.0, 14.0);
    double th = rng.uniform(0.0, kTwoPi);
    scan.points.emplace_back(r * std::cos(th), r * std::sin(th),
                             rng.uniform(-1.8, 1.8));
    scan.intensity.push_back(rng.uniform(0.0, 1.0));
    scan.labels.push_back(0);
  }
  CylGrid grid = voxelize(scan, 10, 14, 6, {0.0, 15.0, -2.0, 2.0}, feat_dim);
  for (int s = 0; s < grid.occupied(); ++s)
    for (int f = 0; f < feat_dim; ++f)
      grid.features(f, s) = rng.normal(0.0, 0.8);
  return grid;
}

}  // namespace

TEST_CASE("alpha and transmittance basics") {
  VecX zeros = VecX::Zero(5), deltas = VecX::Constant(5, 0.3);
  auto [a0, t0] = compute_alpha_T(zeros, deltas);
  CHECK(a0.isZero(0.0));
  CHECK((t0.array() == 1.0).all());

  VecX sigma = VecX::Constant(1, std::log(2.0));
  VecX one = VecX::Constant(1, 1.0);
  auto [a1, t1] = compute_alpha_T(sigma, one);
  CHECK(a1(0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("alpha/T numeric example") {
  VecX sigma(3), deltas = VecX::Constant(3, 1.0);
  sigma << 1.0, 0.5, 2.0;
  auto [alphas, trans] = compute_alpha_T(sigma, deltas);
  CHECK(alphas(0) == doctest::Approx(0.632121).epsilon(1e-6));
  CHECK(alphas(1) == doctest::Approx(0.393469).epsilon(1e-6));
  CHECK(alphas(2) == doctest::Approx(0.864665).epsilon(1e-6));
  CHECK(trans(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(trans(1) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(trans(2) == doctest::Approx(0.223130).epsilon(1e-6));
  // high-precision direct evaluation
  CHECK(trans(1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(trans(2) == doctest::Approx(std::exp(-1.5)).epsilon(1e-15));
}

TEST_CASE("render pixel basics and numeric example") {
  {
    VecX zeros = VecX::Zero(4), deltas = VecX::Constant(4, 0.2);
    auto [a, t] = compute_alpha_T(zeros, deltas);
    MatX logits = MatX::Random(3, 4);
    auto [lp, yp] = render_pixel(a, t, logits);
    CHECK(lp.isZero(0.0));
    for (int c = 0; c < 3; ++c)
      CHECK(yp(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  {
    // single opaque sample takes full weight
    VecX sigma = VecX::Constant(1, 1e4), one = VecX::Constant(1, 1.0);
    auto [a, t] = compute_alpha_T(sigma, one);
    MatX logits(2, 1);
    logits << 1.7, -0.3;
    auto [lp, yp] = render_pixel(a, t, logits);
    CHECK(lp(0) == doctest::Approx(1.7).epsilon(1e-9));
    CHECK(lp(1) == doctest::Approx(-0.3).epsilon(1e-9));
  }
  {
    VecX sigma(3), deltas = VecX::Constant(3, 1.0);
    sigma << 1.0, 0.5, 2.0;
    auto [a, t] = compute_alpha_T(sigma, deltas);
    MatX logits(2, 3);
    logits << 1, 0, 0, 0, 1, 0;
    auto [lp, yp] = render_pixel(a, t, logits);
    CHECK(lp(0) == doctest::Approx(0.632121).epsilon(1e-6));
    CHECK(lp(1) == doctest::Approx(0.144749).epsilon(1e-6));
    CHECK(yp(0) == doctest::Approx(0.6195).epsilon(1e-4));
    CHECK(yp(1) == doctest::Approx(0.3805).epsilon(1e-4));
  }
}

TEST_CASE("weight-sum identity and simplex on random rays") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    int m = rng.uniform_int(1, 30);
    VecX sigma(m), deltas(m);
    for (int k = 0; k < m; ++k) {
      sigma(k) = rng.uniform(0.0, 4.0);
      deltas(k) = rng.uniform(0.01, 0.5);
    }
    auto [a, t] = compute_alpha_T(sigma, deltas);
    CHECK(t(0) == 1.0);
    for (int k = 1; k < m; ++k) CHECK(t(k) <= t(k - 1) + 1e-15);
    double wsum = t.cwiseProduct(a).sum();
    double t_after = t(m - 1) * (1.0 - a(m - 1));
    CHECK(wsum == doctest::Approx(1.0 - t_after).epsilon(1e-12));
    CHECK(wsum <= 1.0 + 1e-12);

    MatX logits(3, m);
    for (int k = 0; k < m; ++k)
      for (int c = 0; c < 3; ++c) logits(c, k) = rng.normal(0.0, 1.0);
    auto [lp, yp] = render_pixel(a, t, logits);
    CHECK(yp.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(yp.minCoeff() >= 0.0);
  }
}

TEST_CASE("occlusion: samples behind an opaque sample get no weight") {
  int m = 10;
  VecX sigma = VecX::Constant(m, 0.5), deltas = VecX::Constant(m, 0.4);
  sigma(3) = 20.0 / deltas(3);  // sigma*delta = 20 at sample 3
  auto [a, t] = compute_alpha_T(sigma, deltas);
  VecX w = t.cwiseProduct(a);
  double tail = 0.0;
  for (int k = 4; k < m; ++k) tail += w(k);
  CHECK(tail < 1e-8 * w.sum());
}

TEST_CASE("render backward closed forms") {
  {
    VecX sigma = VecX::Constant(1, 0.7), deltas = VecX::Constant(1, 0.9);
    auto [a, t] = compute_alpha_T(sigma, deltas);
    MatX logits(2, 1);
    logits << 2.0, -1.0;
    VecX upstream(2);
    upstream << 1.0, 0.0;
    MatX dlogits;
    VecX ddens;
    render_backward(a, t, deltas, logits, upstream, dlogits, ddens);
    // d l_p / d sigma_1 = delta * exp(-sigma delta) * l_1
    double expect = 0.9 * std::exp(-0.7 * 0.9) * 2.0;
    CHECK(ddens(0) == doctest::Approx(expect).epsilon(1e-12));

    VecX zero_up = VecX::Zero(2);
    render_backward(a, t, deltas, logits, zero_up, dlogits, ddens);
    CHECK(dlogits.isZero(0.0));
    CHECK(ddens.isZero(0.0));
  }
}

TEST_CASE("render backward finite differences, M=8 C=4") {
  Rng rng(17);
  int m = 8, cl = 4;
  VecX sigma(m), deltas(m);
  for (int k = 0; k < m; ++k) {
    sigma(k) = rng.uniform(0.1, 2.5);
    deltas(k) = rng.uniform(0.05, 0.4);
  }
  MatX logits(cl, m);
  for (int k = 0; k < m; ++k)
    for (int c = 0; c < cl; ++c) logits(c, k) = rng.normal(0.0, 1.0);
  VecX upstream(cl);
  for (int c = 0; c < cl; ++c) upstream(c) = rng.normal(0.0, 1.0);

  auto forward = [&](const VecX& s, const MatX& l) {
    auto [a, t] = compute_alpha_T(s, deltas);
    auto [lp, yp] = render_pixel(a, t, l);
    return upstream.dot(lp);
  };

  auto [a, t] = compute_alpha_T(sigma, deltas);
  MatX dlogits;
  VecX ddens;
  render_backward(a, t, deltas, logits, upstream, dlogits, ddens);

  double eps = 1e-5;
  for (int k = 0; k < m; ++k) {
    VecX sp = sigma, sm = sigma;
    sp(k) += eps;
    sm(k) -= eps;
    double fd = (forward(sp, logits) - forward(sm, logits)) / (2 * eps);
    CHECK(ddens(k) == doctest::Approx(fd).epsilon(1e-5));
    for (int c = 0; c < cl; ++c) {
      MatX lp = logits, lm = logits;
      lp(c, k) += eps;
      lm(c, k) -= eps;
      double fdl = (forward(sigma, lp) - forward(sigma, lm)) / (2 * eps);
      CHECK(dlogits(c, k) == doctest::Approx(fdl).epsilon(1e-5));
    }
  }
}

TEST_CASE("bundle defaults and spacing") {
  RayBundle b;
  CHECK(b.samples_per_ray == 458);
  CHECK(b.near_plane == doctest::Approx(2.3));
  CHECK(b.far_plane == doctest::Approx(50.0));
  CHECK(b.delta() == doctest::Approx(0.104148).epsilon(1e-5));
}

TEST_CASE("empty grid with zero head renders uniform probabilities") {
  CameraModel cam = test_camera();
  Scan empty_scan;
  empty_scan.classes = 3;
  CylGrid grid = voxelize(empty_scan, 8, 8, 4, {0.0, 10.0, -2.0, 2.0}, 5);
  NerfHead head = NerfHead::init(5, 3, 16, 1);
  head.W1.setZero();
  head.b1.setZero();
  head.W2.setZero();
  head.b2.setZero();
  RayBundle bundle =
      render_bundle(cam, grid, head, {{4, 4}, {8, 6}}, 32, 0.5, 8.0);
  for (const auto& rr : bundle.rays) {
    for (int k = 0; k < 32; ++k)
      CHECK(rr.densities(k) == doctest::Approx(1.0));  // exp(0)
    for (int c = 0; c < 3; ++c)
      CHECK(rr.pixel_probs(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end gradient: grid feature through head and rendering") {
  Rng rng(23);
  CameraModel cam = test_camera();
  CylGrid grid = random_grid(rng, 6);
  NerfHead head = NerfHead::init(6, 3, 12, 9);

  std::vector<std::pair<int, int>> pixels = {{7, 5}, {3, 8}, {11, 4}};
  int m = 24;
  double near = 0.8, far = 14.0;

  VecX upstream(3);
  upstream << 0.7, -0.4, 0.2;
  std::vector<VecX> upstreams(pixels.size(), upstream);

  RayBundle bundle = render_bundle(cam, grid, head, pixels, m, near, far);
  NerfHeadGrads hg;
  hg.init_like(head);
  MatX feat_grads = MatX::Zero(6, grid.occupied());
  render_bundle_backward(bundle, grid, head, upstreams, hg, feat_grads);

  auto objective = [&]() {
    RayBundle b = render_bundle(cam, grid, head, pixels, m, near, far);
    double v = 0.0;
    for (const auto& rr : b.rays) v += upstream.dot(rr.pixel_logits);
    return v;
  };

  int checked = 0;
  double eps = 1e-4;
  for (int s = 0; s < grid.occupied() && checked < 12; ++s) {
    for (int f = 0; f < 6 && checked < 12; ++f) {
      if (std::abs(feat_grads(f, s)) < 1e-7) continue;
      double orig = grid.features(f, s);
      grid.features(f, s) = orig + eps;
      double plus = objective();
      grid.features(f, s) = orig - eps;
      double minus = objective();
      grid.features(f, s) = orig;
      double fd = (plus - minus) / (2 * eps);
      CHECK(feat_grads(f, s) == doctest::Approx(fd).epsilon(1e-4));
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("multi-threaded render matches single-threaded bit for bit") {
  Rng rng(31);
  CameraModel cam = test_camera();
  CylGrid grid = random_grid(rng, 6);
  NerfHead head = NerfHead::init(6, 4, 12, 3);
  std::vector<std::pair<int, int>> pixels;
  for (int v = 0; v < cam.height; v += 2)
    for (int u = 0; u < cam.width; u += 2) pixels.push_back({u, v});

  RayBundle one = render_bundle(cam, grid, head, pixels, 40, 0.5, 14.0, 1);
  RayBundle four = render_bundle(cam, grid, head, pixels, 40, 0.5, 14.0, 4);
  for (size_t i = 0; i < pixels.size(); ++i) {
    CHECK(one.rays[i].pixel_logits == four.rays[i].pixel_logits);
    CHECK(one.rays[i].pixel_probs == four.rays[i].pixel_probs);
  }
}
