#pragma once

#include <string>
#include <utility>
#include <vector>

#include "voxray/geom.hpp"
#include "voxray/grid.hpp"
#include "voxray/heads.hpp"

namespace voxray {

struct RenderDefaults {
  static constexpr int kSamplesPerRay = 458;
  static constexpr double kNearPlane = 2.3;
  static constexpr double kFarPlane = 50.0;
};

/// One rendered ray: per-sample quantities plus the composited pixel.
struct RenderedRay {
  Ray ray;
  VecX densities;   // M
  VecX alphas;      // M
  VecX trans;       // M, trans[0] = 1
  MatX logits;      // C x M
  VecX pixel_logits;  // C, composited
  VecX pixel_probs;   // C, softmax
  int argmax = 0;
};

struct RayBundle {
  int samples_per_ray = RenderDefaults::kSamplesPerRay;
  double near_plane = RenderDefaults::kNearPlane;
  double far_plane = RenderDefaults::kFarPlane;
  int classes = 0;
  std::vector<RenderedRay> rays;

  double delta() const {
    return (far_plane - near_plane) / samples_per_ray;
  }
  Vec3 sample_position(const Ray& r, int k) const {
    double t = near_plane + (k + 0.5) * delta();
    return r.origin + t * r.direction;
  }
};

/// alpha_m = 1 - exp(-sigma_m * delta_m); T_m = prod_{j<m} (1 - alpha_j).
std::pair<VecX, VecX> compute_alpha_T(const VecX& densities,
                                      const VecX& deltas);

/// l_p = sum_m T_m alpha_m l_m; y_p = softmax(l_p).
std::pair<VecX, VecX> render_pixel(const VecX& alphas, const VecX& trans,
                                   const MatX& logits);

/// Gradients of l_p w.r.t. per-sample logits and densities.
/// dlogits is C x M, ddensities is M.
void render_backward(const VecX& alphas, const VecX& trans,
                     const VecX& deltas, const MatX& logits,
                     const VecX& upstream, MatX& dlogits, VecX& ddensities);

/// End-to-end forward: pixel rays -> trilinear features -> NeRF head ->
/// volumetric compositing. Deterministic chunked parallelism over rays.
RayBundle render_bundle(const CameraModel& cam, const CylGrid& grid,
                        const NerfHead& head,
                        const std::vector<std::pair<int, int>>& pixels,
                        int samples_per_ray = RenderDefaults::kSamplesPerRay,
                        double near_plane = RenderDefaults::kNearPlane,
                        double far_plane = RenderDefaults::kFarPlane,
                        int threads = 1);

/// Backward through the whole bundle. Recomputes per-sample head caches;
/// accumulates head weight grads and grid feature grads.
void render_bundle_backward(const RayBundle& bundle, const CylGrid& grid,
                            const NerfHead& head,
                            const std::vector<VecX>& upstream_pixel_grads,
                            NerfHeadGrads& head_grads, MatX& feat_grads,
                            int threads = 1);

VecX softmax(const VecX& logits);

/// Debug dumps: class map as PPM, entropy as PGM scaled by 255/ln C.
void dump_bundle_images(const RayBundle& bundle, int width, int height,
                        const std::string& semantic_ppm,
                        const std::string& entropy_pgm);

}  // namespace voxray
