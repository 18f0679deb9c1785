#include "voxray/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "voxray/io.hpp"

namespace voxray {

namespace {

// Fixed-grain chunking: the chunk layout (and any per-chunk reduction
// order) is independent of the thread count.
constexpr int kChunkGrain = 16;

void for_chunks(int n, int threads,
                const std::function<void(int, int, int)>& body) {
  int chunks = (n + kChunkGrain - 1) / kChunkGrain;
  if (threads <= 1 || chunks <= 1) {
    for (int c = 0; c < chunks; ++c)
      body(c, c * kChunkGrain, std::min(n, (c + 1) * kChunkGrain));
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next.fetch_add(1); c < chunks; c = next.fetch_add(1))
      body(c, c * kChunkGrain, std::min(n, (c + 1) * kChunkGrain));
  };
  std::vector<std::thread> pool;
  int nthreads = std::min(threads, chunks);
  pool.reserve(nthreads);
  for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

std::pair<VecX, VecX> compute_alpha_T(const VecX& densities,
                                      const VecX& deltas) {
  int m = static_cast<int>(densities.size());
  VecX alphas(m), trans(m);
  double t = 1.0;
  for (int k = 0; k < m; ++k) {
    alphas(k) = 1.0 - std::exp(-densities(k) * deltas(k));
    trans(k) = t;
    t *= 1.0 - alphas(k);
  }
  return {alphas, trans};
}

VecX softmax(const VecX& logits) {
  VecX shifted = logits.array() - logits.maxCoeff();
  VecX e = shifted.array().exp();
  return e / e.sum();
}

std::pair<VecX, VecX> render_pixel(const VecX& alphas, const VecX& trans,
                                   const MatX& logits) {
  VecX weights = trans.cwiseProduct(alphas);
  VecX pixel_logits = logits * weights;
  return {pixel_logits, softmax(pixel_logits)};
}

void render_backward(const VecX& alphas, const VecX& trans,
                     const VecX& deltas, const MatX& logits,
                     const VecX& upstream, MatX& dlogits, VecX& ddensities) {
  int m = static_cast<int>(alphas.size());
  VecX weights = trans.cwiseProduct(alphas);
  // g_k = <upstream, l_k>
  VecX g = logits.transpose() * upstream;

  dlogits.resize(logits.rows(), m);
  for (int k = 0; k < m; ++k) dlogits.col(k) = weights(k) * upstream;

  // dl_p/dsigma_k = delta_k * (T_{k+1} g_k - sum_{j>k} w_j g_j)
  ddensities.resize(m);
  double suffix = 0.0;  // sum_{j>k} w_j g_j
  for (int k = m - 1; k >= 0; --k) {
    double t_next = trans(k) * (1.0 - alphas(k));
    ddensities(k) = deltas(k) * (t_next * g(k) - suffix);
    suffix += weights(k) * g(k);
  }
}

RayBundle render_bundle(const CameraModel& cam, const CylGrid& grid,
                        const NerfHead& head,
                        const std::vector<std::pair<int, int>>& pixels,
                        int samples_per_ray, double near_plane,
                        double far_plane, int threads) {
  if (!(near_plane < far_plane) || samples_per_ray < 1)
    throw ConfigError("bad render bundle parameters");
  RayBundle bundle;
  bundle.samples_per_ray = samples_per_ray;
  bundle.near_plane = near_plane;
  bundle.far_plane = far_plane;
  bundle.classes = head.classes;
  bundle.rays.resize(pixels.size());

  double delta = bundle.delta();
  for_chunks(static_cast<int>(pixels.size()), threads,
             [&](int, int begin, int end) {
               for (int i = begin; i < end; ++i) {
                 RenderedRay& rr = bundle.rays[i];
                 rr.ray = pixel_ray(cam, pixels[i].first, pixels[i].second);
                 rr.densities.resize(samples_per_ray);
                 rr.logits.resize(head.classes, samples_per_ray);
                 for (int k = 0; k < samples_per_ray; ++k) {
                   Vec3 p = bundle.sample_position(rr.ray, k);
                   VecX feature = sample_trilinear(grid, p);
                   NerfOutput out = nerf_head_forward(head, feature);
                   rr.densities(k) = out.density;
                   rr.logits.col(k) = out.logits;
                 }
                 VecX deltas = VecX::Constant(samples_per_ray, delta);
                 auto [alphas, trans] = compute_alpha_T(rr.densities, deltas);
                 rr.alphas = alphas;
                 rr.trans = trans;
                 auto [lp, yp] = render_pixel(alphas, trans, rr.logits);
                 rr.pixel_logits = lp;
                 rr.pixel_probs = yp;
                 yp.maxCoeff(&rr.argmax);
               }
             });
  return bundle;
}

void render_bundle_backward(const RayBundle& bundle, const CylGrid& grid,
                            const NerfHead& head,
                            const std::vector<VecX>& upstream_pixel_grads,
                            NerfHeadGrads& head_grads, MatX& feat_grads,
                            int threads) {
  int n = static_cast<int>(bundle.rays.size());
  if (static_cast<int>(upstream_pixel_grads.size()) != n)
    throw std::logic_error("render backward: upstream size mismatch");

  int chunks = (n + kChunkGrain - 1) / kChunkGrain;
  std::vector<NerfHeadGrads> chunk_head(chunks);
  std::vector<MatX> chunk_feat(chunks);

  double delta = bundle.delta();
  for_chunks(n, threads, [&](int chunk, int begin, int end) {
    NerfHeadGrads& hg = chunk_head[chunk];
    hg.init_like(head);
    MatX& fg = chunk_feat[chunk];
    fg = MatX::Zero(grid.features.rows(), grid.features.cols());
    VecX deltas = VecX::Constant(bundle.samples_per_ray, delta);
    for (int i = begin; i < end; ++i) {
      const RenderedRay& rr = bundle.rays[i];
      const VecX& upstream = upstream_pixel_grads[i];
      if (upstream.size() == 0 || upstream.isZero(0.0)) continue;
      MatX dlogits;
      VecX ddens;
      render_backward(rr.alphas, rr.trans, deltas, rr.logits, upstream,
                      dlogits, ddens);
      if (std::getenv("VOX_NO_DDENSITY")) ddens.setZero();
      // per-sample head caches are recomputed, not stored
      NerfSampleCache cache;
      for (int k = 0; k < bundle.samples_per_ray; ++k) {
        Vec3 p = bundle.sample_position(rr.ray, k);
        TrilinearCache tri;
        VecX feature = sample_trilinear(grid, p, &tri);
        nerf_head_forward(head, feature, &cache);
        VecX dfeature = nerf_head_backward(head, cache, dlogits.col(k),
                                           ddens(k), hg);
        sample_trilinear_backward(tri, dfeature, fg);
      }
    }
  });

  // fixed reduction order: chunk index
  for (int c = 0; c < chunks; ++c) {
    head_grads.W1 += chunk_head[c].W1;
    head_grads.b1 += chunk_head[c].b1;
    head_grads.W2 += chunk_head[c].W2;
    head_grads.b2 += chunk_head[c].b2;
    feat_grads += chunk_feat[c];
  }
}

void dump_bundle_images(const RayBundle& bundle, int width, int height,
                        const std::string& semantic_ppm,
                        const std::string& entropy_pgm) {
  static const uint8_t palette[10][3] = {
      {90, 90, 90},   {220, 70, 60},  {60, 160, 220}, {240, 200, 60},
      {90, 200, 90},  {170, 90, 200}, {240, 140, 40}, {90, 220, 200},
      {200, 120, 120}, {130, 130, 240}};
  std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3, 0);
  std::vector<uint8_t> ent(static_cast<size_t>(width) * height, 0);
  double ln_c = std::log(static_cast<double>(bundle.classes));
  for (const auto& rr : bundle.rays) {
    size_t idx = static_cast<size_t>(rr.ray.v) * width + rr.ray.u;
    const uint8_t* col = palette[rr.argmax % 10];
    rgb[idx * 3] = col[0];
    rgb[idx * 3 + 1] = col[1];
    rgb[idx * 3 + 2] = col[2];
    double h = 0.0;
    for (int c = 0; c < bundle.classes; ++c) {
      double p = rr.pixel_probs(c);
      if (p > 0) h -= p * std::log(p);
    }
    ent[idx] = static_cast<uint8_t>(
        std::clamp(h / ln_c * 255.0, 0.0, 255.0));
  }
  if (!semantic_ppm.empty()) write_ppm(semantic_ppm, width, height, rgb);
  if (!entropy_pgm.empty()) write_pgm8(entropy_pgm, width, height, ent);
}

}  // namespace voxray
